"""Trace replay against a store strategy, with oracle-based recall metrics.

Strategies are config presets over the same engine: the static baseline
appends to nearest centroids and never maintains anything, the split
baseline adds threshold splitting, the per-agent baseline searches every
scope graph independently, and the full strategy enables the cache
hierarchy, pattern modeling, profiles, and tiering.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import STATIC_SCOPE
from ..engine import Store, StoreConfig
from .oracle import StreamingOracle
from .workload import Trace, WorkloadSpec, generate_workload

STRATEGIES = {
    "full": {},
    "ivf-static": dict(
        cache_enabled=False,
        pattern_enabled=False,
        profiles_enabled=False,
        prefetch_enabled=False,
        splits_enabled=False,
        lazy_maintenance=False,
        accelerator="none",
    ),
    "ivf-split": dict(
        cache_enabled=False,
        pattern_enabled=False,
        profiles_enabled=False,
        prefetch_enabled=False,
        splits_enabled=True,
        lazy_maintenance=True,
        accelerator="none",
    ),
    "per-agent": dict(coarse_mode="per_agent"),
}


@dataclass
class RunRecord:
    index: int
    kind: str
    agent: str
    latency_s: float
    scanned: int = 0
    coarse: int = 0
    level: str = ""
    early: bool = False
    recall: float | None = None
    scanned_to_recall: int | None = None


@dataclass
class RunReport:
    strategy: str
    spec: dict
    config: dict
    records: list[RunRecord] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    mode: str = "single-threaded-deterministic"

    def search_series(self, metric: str) -> list[float]:
        return [getattr(r, metric) for r in self.records if r.kind == "search"]

    @classmethod
    def load(cls, out_dir) -> "RunReport":
        out = Path(out_dir)
        with open(out / "summary.json") as f:
            summary = json.load(f)
        report = cls(
            summary["strategy"],
            summary["spec"],
            summary["config"],
            aggregates=summary["aggregates"],
            mode=summary.get("mode", ""),
        )
        with open(out / "records.csv", newline="") as f:
            for row in csv.DictReader(f):
                report.records.append(
                    RunRecord(
                        index=int(row["index"]),
                        kind=row["kind"],
                        agent=row["agent"],
                        latency_s=float(row["latency_s"]),
                        scanned=int(row["scanned"]),
                        coarse=int(row["coarse"]),
                        level=row["level"],
                        early=bool(int(row["early"])),
                        recall=float(row["recall"]) if row["recall"] else None,
                        scanned_to_recall=(
                            int(row["scanned_to_recall"]) if row["scanned_to_recall"] else None
                        ),
                    )
                )
        return report

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "records.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                [
                    "index",
                    "kind",
                    "agent",
                    "latency_s",
                    "scanned",
                    "coarse",
                    "level",
                    "early",
                    "recall",
                    "scanned_to_recall",
                ]
            )
            for r in self.records:
                w.writerow(
                    [
                        r.index,
                        r.kind,
                        r.agent,
                        f"{r.latency_s:.9f}",
                        r.scanned,
                        r.coarse,
                        r.level,
                        int(r.early),
                        "" if r.recall is None else f"{r.recall:.6f}",
                        "" if r.scanned_to_recall is None else r.scanned_to_recall,
                    ]
                )
        with open(out / "summary.json", "w") as f:
            json.dump(
                {
                    "strategy": self.strategy,
                    "spec": self.spec,
                    "config": self.config,
                    "mode": self.mode,
                    "aggregates": self.aggregates,
                },
                f,
                indent=2,
                sort_keys=True,
            )
        series = self.search_series("scanned_to_recall")
        with open(out / "scanned_to_recall.dat", "w") as f:
            for i, v in enumerate(series):
                f.write(f"{i} {v if v is not None else ''}\n")


def steady_value(series: list[float], tail: float = 0.25) -> float:
    """Median of the last quarter of the series."""
    if not series:
        return 0.0
    n = max(1, int(len(series) * tail))
    return float(np.median(series[-n:]))


def ops_to_steady(series: list[float], steady: float, window: int = 25, tol: float = 1.25) -> int:
    """First index from which the rolling median stays within tol x steady."""
    if not series:
        return 0
    arr = np.asarray(series, dtype=np.float64)
    window = min(window, len(arr))
    medians = np.array(
        [np.median(arr[i : i + window]) for i in range(len(arr) - window + 1)]
    )
    bound = tol * steady if steady > 0 else tol
    ok = medians <= bound
    idx = len(medians)
    for i in range(len(medians) - 1, -1, -1):
        if not ok[i]:
            break
        idx = i
    return idx if idx < len(medians) else len(series)


def scanned_to_full_recall(scan_ids: np.ndarray, true_ids: list[int], fallback: int) -> int:
    """Scan position at which the last true neighbor was reached."""
    if not true_ids:
        return 0
    worst = 0
    for tid in true_ids:
        pos = np.flatnonzero(scan_ids == tid)
        if len(pos) == 0:
            return max(fallback, len(scan_ids))
        worst = max(worst, int(pos[0]) + 1)
    return worst


def build_store(
    strategy: str,
    spec: WorkloadSpec,
    trace: Trace,
    overrides: dict | None = None,
) -> Store:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r} (have {sorted(STRATEGIES)})")
    kw: dict = dict(
        dimension=spec.dimension,
        seed=spec.seed,
        split_threshold=512,
        split_target=256,
        default_nprobe=8,
    )
    kw.update(STRATEGIES[strategy])
    kw.update(overrides or {})
    store = Store(StoreConfig(**kw))
    for agent in spec.agent_names():
        store.register_agent(agent)
    if len(trace.base_vectors):
        store.bulk_build(STATIC_SCOPE, trace.base_vectors)
    return store


def run(
    spec: WorkloadSpec,
    strategy: str = "full",
    overrides: dict | None = None,
    oracle_recall: bool = True,
    out_dir=None,
    store: Store | None = None,
) -> RunReport:
    trace = generate_workload(spec)
    if store is None:
        store = build_store(strategy, spec, trace, overrides)
    oracle = StreamingOracle(spec.dimension, store.metric) if oracle_recall else None
    if oracle is not None and len(trace.base_vectors):
        base_ids = sorted(
            iid for iid, o in store.clusters.owner.items() if o[0] == "cluster"
        )
        for iid in base_ids:
            oracle.insert(iid, store._vector_of(iid), STATIC_SCOPE)

    report = RunReport(
        strategy,
        json.loads(spec.to_json()),
        {k: str(v) for k, v in vars(store.cfg).items()},
    )
    for i, op in enumerate(trace.ops):
        if op.kind == "end_request":
            store.end_request(op.agent)
            continue
        if op.kind == "insert":
            t0 = time.perf_counter()
            ids = store.insert(op.agent, op.scope, [op.vector])
            dt = time.perf_counter() - t0
            if oracle is not None:
                oracle.insert(ids[0], op.vector, op.scope)
            report.records.append(RunRecord(i, "insert", op.agent, dt))
            continue
        t0 = time.perf_counter()
        res = store.search(op.agent, op.scopes, op.vector, op.k)
        dt = time.perf_counter() - t0
        rec = RunRecord(
            i,
            "search",
            op.agent,
            dt,
            scanned=res.stats.scanned_vectors,
            coarse=res.stats.coarse_computations,
            level=res.stats.level_reached,
            early=res.stats.early_terminated,
        )
        if oracle is not None:
            true = oracle.topk(op.vector, op.k, op.scopes)
            true_ids = [t[0] for t in true]
            got = set(res.ids)
            rec.recall = (
                len(got.intersection(true_ids)) / len(true_ids) if true_ids else 1.0
            )
            rec.scanned_to_recall = scanned_to_full_recall(
                res.scan_ids, true_ids, res.stats.scanned_vectors
            )
        report.records.append(rec)

    searches = [r for r in report.records if r.kind == "search"]
    inserts = [r for r in report.records if r.kind == "insert"]
    agg = {
        "operations": len(report.records),
        "searches": len(searches),
        "inserts": len(inserts),
        "mean_search_latency_s": float(np.mean([r.latency_s for r in searches])) if searches else 0.0,
        "mean_insert_latency_s": float(np.mean([r.latency_s for r in inserts])) if inserts else 0.0,
        "mean_scanned": float(np.mean([r.scanned for r in searches])) if searches else 0.0,
        "total_coarse": int(sum(r.coarse for r in searches)),
        "early_rate": float(np.mean([r.early for r in searches])) if searches else 0.0,
        "levels": {
            lvl: sum(1 for r in searches if r.level == lvl) for lvl in ("L0", "L1", "L2")
        },
        "tier": store.tier.metrics(),
    }
    if oracle_recall and searches:
        recalls = [r.recall for r in searches if r.recall is not None]
        series = [r.scanned_to_recall for r in searches if r.scanned_to_recall is not None]
        agg["mean_recall"] = float(np.mean(recalls)) if recalls else 1.0
        agg["mean_scanned_to_recall"] = float(np.mean(series)) if series else 0.0
        sv = steady_value(series)
        agg["steady_scanned_to_recall"] = sv
        agg["ops_to_steady"] = ops_to_steady(series, sv)
    report.aggregates = agg
    if out_dir is not None:
        report.write(out_dir)
    return report
