"""Foundational value types: vectors, metrics, distances, identities, scopes.

All ranking code in the store uses one ordering convention: smaller distance
means closer. Inner product is therefore stored negated. Vectors are dense
float32 arrays of the store's fixed dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels

STATIC_SCOPE = "static"


class UsageError(ValueError):
    """Caller violated an operation precondition."""


class ScopePermissionError(UsageError):
    """Write attempted on a scope the agent may not modify."""


class ParseError(ValueError):
    """Malformed input file; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionMismatchError(ValueError):
    """Snapshot/exchange file written by an incompatible format version."""


class Metric(Enum):
    SQUARED_EUCLIDEAN = "sq_l2"
    INNER_PRODUCT = "ip"
    COSINE = "cosine"

    @property
    def wire_code(self) -> int:
        return _WIRE_CODES[self]

    @classmethod
    def from_wire(cls, code: int) -> "Metric":
        for m, c in _WIRE_CODES.items():
            if c == code:
                return m
        raise ParseError(f"unknown metric code {code}", 0)


_WIRE_CODES = {
    Metric.SQUARED_EUCLIDEAN: 0,
    Metric.INNER_PRODUCT: 1,
    Metric.COSINE: 2,
}


@dataclass(frozen=True)
class MemoryItem:
    """One stored memory: embedding plus opaque payload and identity."""

    id: int
    vector: np.ndarray
    payload: bytes
    scope: str


def as_vector(values, dimension: int | None = None) -> np.ndarray:
    """Validate and convert to a contiguous float32 vector.

    Rejects NaN/Inf and, when ``dimension`` is given, any length mismatch.
    """
    v = np.ascontiguousarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise UsageError(f"expected a 1-d vector, got shape {v.shape}")
    if dimension is not None and v.shape[0] != dimension:
        raise UsageError(f"dimension mismatch: expected {dimension}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise UsageError("vector contains NaN or Inf")
    return v


def distance(a: np.ndarray, b: np.ndarray, metric: Metric) -> float:
    """Distance between two vectors; smaller is closer for every metric."""
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise UsageError("vector contains NaN or Inf")
    return float(batch_distances(a, b[None, :], metric)[0])


def batch_distances(q: np.ndarray, mat: np.ndarray, metric: Metric) -> np.ndarray:
    """Distances from q to every row of mat (hot path, no validation)."""
    if mat.shape[0] == 0:
        return np.empty(0, dtype=np.float32)
    if metric is Metric.SQUARED_EUCLIDEAN:
        return kernels.sq_l2(q, mat)
    if metric is Metric.INNER_PRODUCT:
        return kernels.neg_ip(q, mat)
    qn = float(np.dot(q, q))
    if qn == 0.0:
        raise UsageError("cosine distance requires non-zero vectors")
    return kernels.cosine(q, mat)


def centroid(vectors: np.ndarray) -> np.ndarray:
    """Componentwise mean; accumulated in float64, returned as float32."""
    if len(vectors) == 0:
        raise UsageError("centroid of empty vector list")
    mat = np.asarray(vectors, dtype=np.float32)
    return mat.mean(axis=0, dtype=np.float64).astype(np.float32)


def deviation(vectors: np.ndarray, center: np.ndarray, metric: Metric) -> float:
    """Mean member distance from the centroid, in embedding-length units.

    Squared-Euclidean distances are square-rooted per member so the result
    stays in length units; inner product has no meaningful spread, so it
    shares the Euclidean definition.
    """
    if len(vectors) == 0:
        raise UsageError("deviation of empty vector list")
    mat = np.asarray(vectors, dtype=np.float32)
    if metric is Metric.COSINE:
        d = batch_distances(center, mat, metric)
        return float(np.mean(np.maximum(d, 0.0)))
    d = kernels.sq_l2(center, mat)
    return float(np.mean(np.sqrt(np.maximum(d, 0.0))))


def is_agent_scope(scope: str) -> bool:
    return scope != STATIC_SCOPE
