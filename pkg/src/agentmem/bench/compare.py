"""Ratio tables between two run reports, with bootstrap confidence bands."""

from __future__ import annotations

import numpy as np

from ..core import UsageError

COMPARED = ("latency_s", "scanned", "coarse", "scanned_to_recall")


def _bootstrap_ratio(
    a: np.ndarray, b: np.ndarray, rng: np.random.Generator, resamples: int = 1000
) -> tuple[float, float, float]:
    ratios = np.empty(resamples)
    for i in range(resamples):
        sa = a[rng.integers(0, len(a), len(a))]
        sb = b[rng.integers(0, len(b), len(b))]
        mb = sb.mean()
        ratios[i] = sa.mean() / mb if mb else np.inf
    mean_b = b.mean()
    point = a.mean() / mean_b if mean_b else np.inf
    lo, hi = np.percentile(ratios, [2.5, 97.5])
    return float(point), float(lo), float(hi)


def compare_report(a, b, resamples: int = 1000, seed: int = 0) -> dict:
    """Per-metric a/b ratios over search records, with 95% bootstrap CIs."""
    if a.spec != b.spec:
        raise UsageError("reports built from different workload specs")
    rng = np.random.default_rng(seed)
    out: dict[str, dict] = {}
    for metric in COMPARED:
        va = np.asarray(
            [getattr(r, metric) or 0 for r in a.records if r.kind == "search"], dtype=np.float64
        )
        vb = np.asarray(
            [getattr(r, metric) or 0 for r in b.records if r.kind == "search"], dtype=np.float64
        )
        if len(va) == 0 or len(vb) == 0 or vb.sum() == 0:
            continue
        point, lo, hi = _bootstrap_ratio(va, vb, rng, resamples)
        out[metric] = {"ratio": point, "ci95": [lo, hi]}
    return out
