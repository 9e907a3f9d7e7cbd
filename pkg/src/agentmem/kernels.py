"""Hot numeric kernels: batch distances and k-means assignment.

Two interchangeable backends. The numba backend JIT-compiles tight loops;
the numpy backend uses vectorized expressions. The active backend is picked
once at import time: numba when importable, unless AGENTMEM_NUMBA=0 forces
the numpy path. Both are kept importable so the kernel benchmark can time
them side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


USE_NUMBA = HAVE_NUMBA and os.environ.get("AGENTMEM_NUMBA", "1").lower() not in (
    "0",
    "false",
    "off",
)


# pure-numpy backend


def sq_l2_np(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from q to every row of mat."""
    diff = mat - q
    return np.einsum("ij,ij->i", diff, diff)


def neg_ip_np(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Negated inner product (smaller = closer)."""
    return -(mat @ q)


def cosine_np(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Cosine distance 1 - cos(q, row). Rows and q must be non-zero."""
    qn = np.sqrt(np.dot(q, q))
    norms = np.sqrt(np.einsum("ij,ij->i", mat, mat))
    return 1.0 - (mat @ q) / (norms * qn)


def kmeans_assign_np(x: np.ndarray, cents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels and squared distances for each row of x."""
    xx = np.einsum("ij,ij->i", x, x)
    cc = np.einsum("ij,ij->i", cents, cents)
    d = xx[:, None] + cc[None, :] - 2.0 * (x @ cents.T)
    np.maximum(d, 0.0, out=d)
    labels = np.argmin(d, axis=1)
    return labels.astype(np.int64), d[np.arange(len(x)), labels]


# numba backend


@njit(cache=True)
def sq_l2_nb(q, mat):  # pragma: no cover - exercised via dispatch
    n, d = mat.shape
    out = np.empty(n, dtype=np.float32)
    for i in range(n):
        acc = np.float32(0.0)
        for j in range(d):
            t = mat[i, j] - q[j]
            acc += t * t
        out[i] = acc
    return out


@njit(cache=True)
def neg_ip_nb(q, mat):  # pragma: no cover
    n, d = mat.shape
    out = np.empty(n, dtype=np.float32)
    for i in range(n):
        acc = np.float32(0.0)
        for j in range(d):
            acc += mat[i, j] * q[j]
        out[i] = -acc
    return out


@njit(cache=True)
def cosine_nb(q, mat):  # pragma: no cover
    n, d = mat.shape
    qn = np.float32(0.0)
    for j in range(d):
        qn += q[j] * q[j]
    qn = np.sqrt(qn)
    out = np.empty(n, dtype=np.float32)
    for i in range(n):
        dot = np.float32(0.0)
        nn = np.float32(0.0)
        for j in range(d):
            dot += mat[i, j] * q[j]
            nn += mat[i, j] * mat[i, j]
        out[i] = np.float32(1.0) - dot / (np.sqrt(nn) * qn)
    return out


@njit(cache=True)
def kmeans_assign_nb(x, cents):  # pragma: no cover
    n, d = x.shape
    k = cents.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = 1e300
        arg = 0
        for c in range(k):
            acc = 0.0
            for j in range(d):
                t = x[i, j] - cents[c, j]
                acc += t * t
            if acc < best:
                best = acc
                arg = c
        labels[i] = arg
        dists[i] = best
    return labels, dists


BACKENDS = {
    "numpy": {
        "sq_l2": sq_l2_np,
        "neg_ip": neg_ip_np,
        "cosine": cosine_np,
        "kmeans_assign": kmeans_assign_np,
    },
    "numba": {
        "sq_l2": sq_l2_nb,
        "neg_ip": neg_ip_nb,
        "cosine": cosine_nb,
        "kmeans_assign": kmeans_assign_nb,
    },
}

ACTIVE_BACKEND = "numba" if USE_NUMBA else "numpy"

sq_l2 = BACKENDS[ACTIVE_BACKEND]["sq_l2"]
neg_ip = BACKENDS[ACTIVE_BACKEND]["neg_ip"]
cosine = BACKENDS[ACTIVE_BACKEND]["cosine"]
kmeans_assign = BACKENDS[ACTIVE_BACKEND]["kmeans_assign"]
