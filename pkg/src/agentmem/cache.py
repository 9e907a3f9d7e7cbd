"""Per-agent three-level index cache: L0 tiny / L1 intermediate / L2 base.

L0 keys tiny clusters by the FSM state that spawned them and holds the most
recently touched vectors; overflow writes back into L1; an L1 cluster that
reaches capacity merges down into the base level as one coherent new
cluster. Items flagged staged are owned by the cache until merge-down;
everything else is a copy of an L2-owned item.

Early termination: once the current top-k candidates at a level are all
closer than alpha_et times the agent's recent average top-k distance, the
deeper levels are skipped. The check runs after each scanned entry, so the
hint-predicted entry going first genuinely raises the stop rate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Metric, batch_distances
from .pool import ScopeCodes, VectorPool

DEFAULT_KEY = "default"


@dataclass
class L0Entry:
    key: object
    pool: VectorPool
    freq: int = 0
    last_access: int = 0


class L1Cluster:
    def __init__(self, dimension: int):
        self.pool = VectorPool(dimension, ordered=False)
        self._sum = np.zeros(dimension, dtype=np.float64)

    def __len__(self):
        return len(self.pool)

    @property
    def centroid(self) -> np.ndarray:
        n = len(self.pool)
        if n == 0:
            return self._sum.astype(np.float32)
        return (self._sum / n).astype(np.float32)

    def add(self, item_id: int, vector: np.ndarray, scope_code: int, staged: bool) -> bool:
        if item_id in self.pool:
            if staged:  # never lose ownership on a duplicate capture
                self.pool.set_staged(item_id, True)
            return False
        self.pool.add(item_id, vector, scope_code, staged)
        self._sum += vector.astype(np.float64)
        return True

    def remove(self, item_id: int) -> bool:
        row = self.pool._rows.get(item_id)
        if row is None:
            return False
        self._sum -= self.pool.vectors[row].astype(np.float64)
        return self.pool.remove(item_id)


@dataclass
class MergeDownOutcome:
    """Result of merging one L1 cluster into the base level."""

    staged: dict[int, list[tuple[int, np.ndarray]]] = field(default_factory=dict)
    dropped_copies: int = 0

    @property
    def empty(self) -> bool:
        return not self.staged


@dataclass
class CacheSearchResult:
    ids: np.ndarray
    dists: np.ndarray
    level_reached: str  # "L0" | "L1" | "L2"
    early_terminated: bool
    scanned: int
    scan_ids: list[np.ndarray]


class MultiLevelCache:
    """All cache state for one agent; mutated only by that agent's tasks."""

    def __init__(
        self,
        agent: str,
        dimension: int,
        metric: Metric,
        scope_codes: ScopeCodes,
        n_p: int = 16,
        l0_capacity: int = 64,
        l1_capacity: int = 1024,
        kappa: int = 2,
        alpha_et: float = 0.7,
        window_w: int = 32,
        verify_mode: bool = False,
    ):
        self.agent = agent
        self.dimension = dimension
        self.metric = metric
        self.scope_codes = scope_codes
        self.n_p = n_p
        self.l0_capacity = l0_capacity
        self.l1_capacity = l1_capacity
        self.kappa = kappa
        self.alpha_et = alpha_et
        self.window_w = window_w
        self.verify_mode = verify_mode
        self.l0: dict[object, L0Entry] = {}
        self.l1: list[L1Cluster] = []
        self._l1_index: dict[int, L1Cluster] = {}  # item id -> holding cluster
        self._seq = 0
        self._window: deque[float] = deque(maxlen=window_w)
        self.completed_queries = 0
        self.verified_count = 0
        self.miss_count = 0

    # --- early termination state ---

    @property
    def d_agent(self) -> float | None:
        if not self._window:
            return None
        return float(np.mean(self._window))

    def termination_ready(self) -> bool:
        return (
            self.alpha_et > 0.0
            and self.completed_queries >= self.window_w // 2
            and self.d_agent is not None
        )

    def record_completed(self, mean_topk_distance: float):
        """Feed d_agent from a completed (full or verified) query."""
        self.completed_queries += 1
        self._window.append(mean_topk_distance)

    def threshold(self) -> float | None:
        if not self.termination_ready():
            return None
        return self.alpha_et * self.d_agent

    # --- search ---

    @staticmethod
    def _kth(dist_chunks: list[np.ndarray], k: int) -> float | None:
        total = sum(len(c) for c in dist_chunks)
        if total < k:
            return None
        alld = np.concatenate(dist_chunks)
        return float(np.partition(alld, k - 1)[k - 1])

    def cached_search(
        self,
        q: np.ndarray,
        k: int,
        scope_mask: np.ndarray,
        hint_keys: list[object] | None = None,
        termination_enabled: bool = True,
    ) -> CacheSearchResult:
        """Scan L0 then L1, hint-predicted entries first, stopping early when
        the running top-k is already inside the agent's distance envelope."""
        self._seq += 1
        ids: list[np.ndarray] = []
        dists: list[np.ndarray] = []
        scan_ids: list[np.ndarray] = []
        scanned = 0
        hint_keys = hint_keys or []
        thresh = self.threshold() if termination_enabled else None

        def scan_pool(pool: VectorPool) -> int:
            if len(pool) == 0:
                return 0
            mask = pool.scope_mask(scope_mask)
            if not mask.any():
                return 0
            sel_ids = pool.ids[mask]
            d = batch_distances(q, pool.vectors[mask], self.metric)
            ids.append(sel_ids.copy())
            dists.append(d)
            scan_ids.append(sel_ids.copy())
            return int(mask.sum())

        def stop() -> bool:
            if thresh is None:
                return False
            kth = self._kth(dists, k)
            return kth is not None and kth < thresh

        l0_order = [key for key in hint_keys if key in self.l0]
        rest = [key for key in self.l0 if key not in l0_order]
        rest.sort(key=lambda key: (-self.l0[key].freq, -self.l0[key].last_access))
        l0_order.extend(rest)
        for key in l0_order:
            entry = self.l0[key]
            entry.last_access = self._seq
            scanned += scan_pool(entry.pool)
            if stop():
                return self._result(ids, dists, "L0", True, scanned, scan_ids)

        hinted_l1 = [c for c in hint_keys if isinstance(c, L1Cluster) and c in self.l1]
        others = [c for c in self.l1 if c not in hinted_l1 and len(c)]
        if others:
            cents = np.stack([c.centroid for c in others])
            order = np.argsort(batch_distances(q, cents, self.metric), kind="stable")
            others = [others[i] for i in order]
        for cl in hinted_l1 + others:
            scanned += scan_pool(cl.pool)
            if stop():
                return self._result(ids, dists, "L1", True, scanned, scan_ids)

        return self._result(ids, dists, "L2", False, scanned, scan_ids)

    @staticmethod
    def _result(ids, dists, level, early, scanned, scan_ids) -> CacheSearchResult:
        if ids:
            return CacheSearchResult(
                np.concatenate(ids), np.concatenate(dists), level, early, scanned, scan_ids
            )
        return CacheSearchResult(
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float32),
            level,
            early,
            scanned,
            scan_ids,
        )

    # --- promotion / write-back / capture ---

    def promote_to_l0(
        self,
        items: list[tuple[int, np.ndarray, int, bool]],
        state_key: object = DEFAULT_KEY,
    ) -> list[MergeDownOutcome]:
        """Append items to the state-keyed tiny cluster, cascading overflow."""
        self._seq += 1
        outcomes: list[MergeDownOutcome] = []
        entry = self.l0.get(state_key)
        if entry is None:
            if len(self.l0) >= self.n_p:
                victim_key = min(
                    self.l0, key=lambda key: (self.l0[key].freq, self.l0[key].last_access)
                )
                victim = self.l0.pop(victim_key)
                outcomes.extend(self._l1_place(list(victim.pool.rows())))
            entry = L0Entry(state_key, VectorPool(self.dimension, ordered=True))
            self.l0[state_key] = entry
        entry.freq += 1
        entry.last_access = self._seq
        for item_id, vec, scope_code, staged in items:
            prior = entry.pool.staged_flag(item_id)
            if prior is not None:
                entry.pool.remove(item_id)  # re-promote refreshes recency
                staged = staged or prior  # ownership survives re-promotion
            entry.pool.add(item_id, vec, scope_code, staged)
        while len(entry.pool) > self.l0_capacity:
            outcomes.extend(self._l1_place([entry.pool.pop_front()]))
        return outcomes

    def _nearest_l1(self, vector: np.ndarray) -> L1Cluster:
        if len(self.l1) < self.n_p:
            cl = L1Cluster(self.dimension)
            self.l1.append(cl)
            return cl
        cents = np.stack([c.centroid for c in self.l1])
        return self.l1[int(np.argmin(batch_distances(vector, cents, self.metric)))]

    def _l1_add(self, target: L1Cluster, item_id: int, vec, scope_code: int, staged: bool) -> bool:
        """Index-wide dedup: an item lives in at most one L1 cluster."""
        holder = self._l1_index.get(item_id)
        if holder is not None:
            if staged:  # ownership must survive a duplicate write-back
                holder.pool.set_staged(item_id, True)
            return False
        if target.add(item_id, vec, scope_code, staged):
            self._l1_index[item_id] = target
            return True
        return False

    def _l1_place(self, items: list[tuple[int, np.ndarray, int, bool]]) -> list[MergeDownOutcome]:
        outcomes = []
        for item_id, vec, scope_code, staged in items:
            target = self._nearest_l1(vec)
            self._l1_add(target, item_id, vec, scope_code, staged)
            if len(target) >= self.l1_capacity:
                outcomes.append(self.merge_down(target))
        return outcomes

    def l1_capture(
        self, q: np.ndarray, results: list[tuple[int, np.ndarray, int, bool]]
    ) -> list[MergeDownOutcome]:
        """Cache the top-k' neighborhood of a query in the nearest L1 cluster."""
        if not results:
            return []
        fresh = [r for r in results if r[0] not in self._l1_index or r[3]]
        if not fresh:
            return []
        target = self._nearest_l1(q)
        for item_id, vec, scope_code, staged in fresh:
            self._l1_add(target, item_id, vec, scope_code, staged)
        if len(target) >= self.l1_capacity:
            return [self.merge_down(target)]
        if len(target) == 0:
            self.l1 = [c for c in self.l1 if c is not target]
        return []

    def merge_down(self, cluster: L1Cluster) -> MergeDownOutcome:
        """Free the L1 slot; staged vectors go down as one new base cluster."""
        outcome = MergeDownOutcome()
        for item_id, vec, scope_code, staged in cluster.pool.rows():
            if staged:
                outcome.staged.setdefault(scope_code, []).append((item_id, vec.copy()))
            else:
                outcome.dropped_copies += 1
            self._l1_index.pop(item_id, None)
        self.l1 = [c for c in self.l1 if c is not cluster]
        return outcome

    def flush(self) -> list[MergeDownOutcome]:
        """Empty every level, merging all staged content down."""
        outcomes = []
        for entry in self.l0.values():
            outcomes.extend(self._l1_place(list(entry.pool.rows())))
        self.l0.clear()
        for cl in list(self.l1):
            outcomes.append(self.merge_down(cl))
        return outcomes

    # --- maintenance ---

    def mark_merged(self, item_ids: set[int]):
        """Clear staged flags once ownership moved to an L2 cluster."""
        for entry in self.l0.values():
            for item_id in item_ids:
                entry.pool.set_staged(item_id, False)
        for cl in self.l1:
            for item_id in item_ids:
                cl.pool.set_staged(item_id, False)

    def drop_item(self, item_id: int):
        for entry in self.l0.values():
            entry.pool.remove(item_id)
        holder = self._l1_index.pop(item_id, None)
        if holder is not None:
            holder.remove(item_id)

    def l1_listing(self) -> list[tuple[L1Cluster, np.ndarray]]:
        return [(c, c.centroid) for c in self.l1 if len(c)]
