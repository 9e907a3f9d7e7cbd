"""Public store facade: scopes, batched operations, the search pipeline
(pattern hint -> cache -> coarse -> fine -> profiles -> tiering), background
tasks, persistence entry points, and ingestion.

Fresh agent inserts are staged: owned by the store's staging area, organized
through the agent's L0/L1 cache, and materialized as coherent new base
clusters at merge-down. Every search scans cache levels and staging in
addition to selected base clusters, so acknowledged writes are immediately
visible and exhaustive mode is exact.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

import numpy as np

from . import persist
from .cache import DEFAULT_KEY, MergeDownOutcome, MultiLevelCache
from .clusters import ClusterStore, SplitOutcome, kmeans_split_points
from .core import centroid as vector_mean
from .core import deviation as vector_spread
from .concurrency import RWLock, TaskRunner
from .core import (
    STATIC_SCOPE,
    Metric,
    ScopePermissionError,
    UsageError,
    as_vector,
    batch_distances,
)
from .fsm import PatternHint, PatternTable
from .graph import HybridGraphIndex, profile_promote, profile_reorder
from .pool import ScopeCodes
from .tiering import CostModel, SimulatedAccelerator, TierManager

SEED_ENV = "PANCAKE_SEED"


@dataclass
class StoreConfig:
    dimension: int
    metric: Metric = Metric.SQUARED_EUCLIDEAN
    seed: int = 0
    # cluster store
    split_threshold: int = 4096
    split_target: int = 2048
    maintenance_interval: int = 256
    # multilevel cache
    n_p: int = 16
    l0_capacity: int = 64
    l1_capacity: int = 1024
    kappa: int = 2
    alpha_et: float = 0.7
    window_w: int = 32
    verify_mode: bool = False
    cache_enabled: bool = True
    # pattern fsm
    n_s: int = 8
    d_merge_factor: float = 0.5
    theta_match: float = 0.5
    prefetch_enabled: bool = True
    pattern_enabled: bool = True
    # hybrid graph
    m: int = 16
    ef_search_factor: int = 4
    alpha_ic: float = 6.0
    p_size: int = 32
    coarse_mode: str = "hybrid"  # or "per_agent"
    profiles_enabled: bool = True
    # tiering
    accelerator: str = "simulated"  # "none" | "simulated"
    budget_bytes: int = 64 << 20
    b_insert: int = 128
    decay_half_life: int = 10000
    slack_fraction: float = 0.25
    hotset_interval: int = 64
    # engine
    splits_enabled: bool = True
    lazy_maintenance: bool = True  # False: never recompute stats (static baseline)
    static_writable_by_agents: bool = False
    default_nprobe: int = 8
    threads: int = 0  # 0 = inline deterministic mode
    request_window: int = 64

    def __post_init__(self):
        if isinstance(self.metric, str):
            self.metric = Metric(self.metric)
        if self.dimension < 1:
            raise UsageError(f"dimension must be >= 1, got {self.dimension}")
        if not 0.0 <= self.alpha_et <= 1.0:
            raise UsageError("alpha_et must lie in [0, 1]")
        if self.split_target >= self.split_threshold:
            raise UsageError("split_target must be below split_threshold")
        if self.coarse_mode not in ("hybrid", "per_agent"):
            raise UsageError(f"unknown coarse_mode {self.coarse_mode!r}")
        if self.accelerator not in ("none", "simulated"):
            raise UsageError(f"unknown accelerator {self.accelerator!r}")


@dataclass
class SearchStats:
    scanned_vectors: int = 0
    coarse_computations: int = 0
    level_reached: str = "L2"
    early_terminated: bool = False


@dataclass
class SearchResult:
    hits: list[tuple[int, float, str]]  # (item id, distance, scope)
    stats: SearchStats
    scan_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def ids(self) -> list[int]:
        return [h[0] for h in self.hits]

    @property
    def distances(self) -> list[float]:
        return [h[1] for h in self.hits]


@dataclass
class OperationBatch:
    kind: str  # "search" | "insert" | "update" | "delete"
    agent: str | None
    ops: list

    def __post_init__(self):
        if self.kind not in ("search", "insert", "update", "delete"):
            raise UsageError(f"unknown batch kind {self.kind!r}")


class Store:
    """One memory store: a static scope plus any number of agent scopes."""

    def __init__(self, cfg: StoreConfig):
        self.cfg = cfg
        seed = cfg.seed
        env = os.environ.get(SEED_ENV)
        if env is not None:
            seed = int(env)
        self.seed = seed
        self.rng = np.random.default_rng(np.random.PCG64(seed))
        self.metric = cfg.metric
        self.scope_codes = ScopeCodes()
        self.clusters = ClusterStore(
            cfg.dimension,
            cfg.metric,
            self.rng,
            split_threshold=cfg.split_threshold,
            split_target=cfg.split_target,
            maintenance_interval=cfg.maintenance_interval,
        )
        self.graph = HybridGraphIndex(
            self._centroid_of,
            cfg.metric,
            self.rng,
            m=cfg.m,
            ef_search_factor=cfg.ef_search_factor,
            alpha_ic=cfg.alpha_ic,
        )
        accel = SimulatedAccelerator(CostModel()) if cfg.accelerator == "simulated" else None
        self.runner = TaskRunner(cfg.threads)
        self.tier = TierManager(
            self.clusters,
            accel,
            budget_bytes=cfg.budget_bytes,
            b_insert=cfg.b_insert,
            decay_half_life=cfg.decay_half_life,
            slack_fraction=cfg.slack_fraction,
            runner=self.runner,
        )
        self.clusters.on_cluster_created = lambda cl: self.graph.insert(cl.scope, cl.id)
        self.clusters.on_cluster_retired = lambda cl: self.graph.remove(cl.scope, cl.id)

        self.caches: dict[str, MultiLevelCache] = {}
        self.patterns: dict[str, PatternTable] = {}
        self.sequences: dict[str, list[np.ndarray]] = {}
        self.payloads: dict[int, bytes] = {}
        self._next_item_id = 0
        self._op_count = 0
        # shared structure guarded store-wide; per-agent locks give each
        # agent's operation stream its ordering guarantee
        self._lock = RWLock()
        self._agent_locks: dict[str, threading.RLock] = {}
        self._ingest_lock = threading.RLock()
        self._prefetch_inflight: set[tuple[str, object]] = set()

        self.clusters.register_scope(STATIC_SCOPE)
        self.graph.register_scope(STATIC_SCOPE)
        self.scope_codes.intern(STATIC_SCOPE)

    # --- lifecycle ---

    @classmethod
    def create(cls, cfg: StoreConfig) -> "Store":
        return cls(cfg)

    def close(self):
        self.runner.shutdown()

    def _centroid_of(self, cid: int) -> np.ndarray:
        return self.clusters.clusters[cid].centroid

    # --- scopes ---

    def register_agent(self, agent_id: str) -> str:
        if agent_id == STATIC_SCOPE:
            raise UsageError(f"{STATIC_SCOPE!r} is reserved for the shared base scope")
        if agent_id in self.caches:
            raise UsageError(f"agent {agent_id!r} already registered")
        self.clusters.register_scope(agent_id)
        self.graph.register_scope(agent_id)
        self.scope_codes.intern(agent_id)
        self.caches[agent_id] = MultiLevelCache(
            agent_id,
            self.cfg.dimension,
            self.metric,
            self.scope_codes,
            n_p=self.cfg.n_p,
            l0_capacity=self.cfg.l0_capacity,
            l1_capacity=self.cfg.l1_capacity,
            kappa=self.cfg.kappa,
            alpha_et=self.cfg.alpha_et,
            window_w=self.cfg.window_w,
            verify_mode=self.cfg.verify_mode,
        )
        self.patterns[agent_id] = PatternTable(
            n_p=self.cfg.n_p,
            n_s=self.cfg.n_s,
            metric=self.metric,
            theta_match=self.cfg.theta_match,
            d_merge_factor=self.cfg.d_merge_factor,
        )
        self.sequences[agent_id] = []
        self._agent_locks[agent_id] = threading.RLock()
        return agent_id

    def _serialized(self, agent: str | None) -> threading.RLock:
        if agent is None:
            return self._ingest_lock
        return self._agent_locks[agent]

    def unregister_agent(self, agent_id: str):
        if agent_id not in self.caches:
            raise UsageError(f"unknown agent {agent_id!r}")
        for cid in list(self.clusters.scope_clusters(agent_id)):
            self.tier._evict(cid)
            self.clusters.retire_cluster(cid)
        for item_id in list(self.clusters.staged.get(agent_id, {})):
            self.clusters.unstage(agent_id, item_id)
            self.payloads.pop(item_id, None)
        del self.caches[agent_id]
        del self.patterns[agent_id]
        del self.sequences[agent_id]
        del self._agent_locks[agent_id]

    def registered_scopes(self) -> list[str]:
        return list(self.clusters.by_scope)

    def _check_scopes(self, scopes) -> set[str]:
        out = set(scopes)
        if not out:
            raise UsageError("scope set must be non-empty")
        for sc in out:
            if sc not in self.clusters.by_scope:
                raise UsageError(f"unknown scope {sc!r}")
        return out

    def _check_writable(self, agent: str | None, scope: str):
        if scope not in self.clusters.by_scope:
            raise UsageError(f"unknown scope {scope!r}")
        if agent is None:
            return  # store-level ingestion
        if scope == agent:
            return
        if scope == STATIC_SCOPE and self.cfg.static_writable_by_agents:
            return
        raise ScopePermissionError(f"agent {agent!r} may not write scope {scope!r}")

    # --- search ---

    def search(
        self,
        agent: str | None,
        scopes,
        q,
        k: int,
        nprobe: int | None = None,
        _internal: bool = False,
        _no_cache: bool = False,
    ) -> SearchResult:
        if k < 1:
            raise UsageError("k must be >= 1")
        scopes = self._check_scopes(scopes)
        if agent is not None and agent not in self.caches:
            raise UsageError(f"unknown agent {agent!r}")
        q = as_vector(q, self.cfg.dimension)
        nprobe = nprobe if nprobe is not None else self.cfg.default_nprobe
        if nprobe < 1:
            raise UsageError("nprobe must be >= 1")
        with self._serialized(agent):
            self._lock.acquire_read()
            try:
                result, hint, extended = self._search_read_phase(
                    agent, scopes, q, k, nprobe, _internal, _no_cache
                )
            finally:
                self._lock.release_read()
            if agent is not None:
                self._search_side_effects(agent, q, k, hint, result, extended, _internal)
            self._tick()
            return result

    def _search_read_phase(self, agent, scopes, q, k, nprobe, _internal, _no_cache=False):
        exhaustive_edge = k >= self.clusters.live_count()
        stats = SearchStats()
        scope_mask = self.scope_codes.mask_codes(scopes)
        hint = self._hint_for(agent, q) if not _internal else PatternHint()

        id_chunks: list[np.ndarray] = []
        dist_chunks: list[np.ndarray] = []
        scan_chunks: list[np.ndarray] = []

        use_cache = self.cfg.cache_enabled and agent and not _no_cache
        cache = self.caches.get(agent) if use_cache else None
        early = False
        if cache is not None:
            cres = cache.cached_search(
                q,
                k,
                scope_mask,
                hint_keys=hint.predicted_clusters,
                termination_enabled=not exhaustive_edge,
            )
            if len(cres.ids):
                id_chunks.append(cres.ids)
                dist_chunks.append(cres.dists)
            scan_chunks.extend(cres.scan_ids)
            stats.scanned_vectors += cres.scanned
            early = cres.early_terminated
            stats.level_reached = cres.level_reached
            stats.early_terminated = early

        selected: list[tuple[int, float]] = []
        if not early:
            stats.level_reached = "L2"
            # staging areas hold items not yet merged into base clusters
            for sc in sorted(scopes):
                staged = self.clusters.staged.get(sc)
                if not staged:
                    continue
                mat = np.stack(list(staged.values()))
                ids = np.fromiter(staged.keys(), dtype=np.int64, count=len(staged))
                d = batch_distances(q, mat, self.metric)
                id_chunks.append(ids)
                dist_chunks.append(d)
                scan_chunks.append(ids)
                stats.scanned_vectors += len(ids)

            eff_nprobe = nprobe
            ef = None
            if exhaustive_edge:
                eff_nprobe = max(nprobe, len(self.clusters.clusters) or 1)
                ef = eff_nprobe * self.cfg.ef_search_factor
            if self.cfg.coarse_mode == "per_agent":
                selected, ncomp = self.graph.search_independent(q, scopes, eff_nprobe, ef)
            else:
                selected, ncomp = self.graph.search(q, scopes, eff_nprobe, ef)
            stats.coarse_computations = ncomp

            thresh = cache.threshold() if (cache is not None and not exhaustive_edge) else None
            for cid, _ in selected:
                cl = self.clusters.clusters[cid]
                cl.access_count += 1
                self.tier.record_access(cid)
                ids, dists, scanned = self.tier.merged_search(cid, q, self.metric)
                if len(ids):
                    id_chunks.append(ids)
                    dist_chunks.append(dists)
                stats.scanned_vectors += scanned
                if self.cfg.profiles_enabled and agent and cl.profiles.get(agent):
                    order = profile_reorder(cl.profiles[agent], list(range(cl.size)))
                    scan_chunks.append(cl.member_ids[order])
                else:
                    scan_chunks.append(cl.member_ids.copy())
                if thresh is not None and len(dist_chunks):
                    kth = MultiLevelCache._kth(dist_chunks, k)
                    if kth is not None and kth < thresh:
                        early = True
                        stats.early_terminated = True
                        break

        extended = self._topk(id_chunks, dist_chunks, max(k, self.cfg.kappa * k))
        result = SearchResult(
            extended[:k],
            stats,
            np.concatenate(scan_chunks) if scan_chunks else np.empty(0, dtype=np.int64),
        )
        return result, hint, extended

    def _topk(self, id_chunks, dist_chunks, k) -> list[tuple[int, float, str]]:
        if not id_chunks:
            return []
        ids = np.concatenate(id_chunks)
        dists = np.concatenate(dist_chunks).astype(np.float32)
        order = np.lexsort((ids, dists))
        hits: list[tuple[int, float, str]] = []
        seen: set[int] = set()
        for idx in order:
            iid = int(ids[idx])
            if iid in seen:
                continue
            seen.add(iid)
            owner = self.clusters.owner.get(iid)
            if owner is None:
                continue  # cached copy of a deleted item
            scope = owner[1] if owner[0] == "staged" else self.clusters.clusters[owner[1]].scope
            hits.append((iid, float(dists[idx]), scope))
            if len(hits) >= k:
                break
        return hits

    def _hint_for(self, agent: str | None, q: np.ndarray) -> PatternHint:
        if not (agent and self.cfg.pattern_enabled):
            return PatternHint()
        table = self.patterns[agent]
        cache = self.caches.get(agent)
        listing = cache.l1_listing() if cache else None
        prefix = self.sequences[agent][-(self.cfg.request_window - 1) :] + [q]
        return table.match_and_predict(prefix, listing)

    def _state_key_for(self, agent: str, v: np.ndarray) -> object:
        """L0 entry key: the matched FSM's aligned state for this access."""
        if not self.cfg.pattern_enabled:
            return DEFAULT_KEY
        table = self.patterns[agent]
        prefix = self.sequences[agent][-(self.cfg.request_window - 1) :] + [v]
        idx, _ = table.match(prefix)
        if idx is None:
            return DEFAULT_KEY
        return (idx, table.fsms[idx].align(v, self.metric))

    def _search_side_effects(
        self,
        agent: str,
        q: np.ndarray,
        k: int,
        hint: PatternHint,
        result: SearchResult,
        extended: list[tuple[int, float, str]],
        internal: bool,
    ):
        cache = self.caches.get(agent) if self.cfg.cache_enabled else None
        if cache is not None and result.hits:
            if not result.stats.early_terminated:
                if not internal:
                    cache.record_completed(float(np.mean([h[1] for h in result.hits])))
            elif cache.verify_mode and not internal:
                self.runner.submit("search", self._verify_early_return, agent, q, k, result)

            state_key = self._state_key_for(agent, q)
            outcomes = cache.promote_to_l0(
                [
                    (iid, self._vector_of(iid), self.scope_codes.intern(sc), False)
                    for iid, _, sc in result.hits
                    if self._vector_of(iid) is not None
                ],
                state_key,
            )
            capture = [
                (iid, self._vector_of(iid), self.scope_codes.intern(sc), False)
                for iid, _, sc in extended
                if self._vector_of(iid) is not None
            ]
            outcomes.extend(cache.l1_capture(q, capture))
            if any(not o.empty for o in outcomes):
                with self._lock.write():
                    self._materialize(agent, outcomes)

        if self.cfg.profiles_enabled:
            by_cluster: dict[int, list[int]] = {}
            for iid, _, _ in result.hits:
                owner = self.clusters.owner.get(iid)
                if owner and owner[0] == "cluster":
                    cl = self.clusters.clusters[owner[1]]
                    by_cluster.setdefault(owner[1], []).append(cl.id_to_row[iid])
            for cid, rows in by_cluster.items():
                cl = self.clusters.clusters[cid]
                cl.profiles[agent] = profile_promote(
                    cl.profiles.get(agent, []), rows, self.cfg.p_size
                )

        if not internal:
            self._append_sequence(agent, q)
            if self.cfg.prefetch_enabled and not hint.empty:
                self.prefetch(agent, hint, k)

    def _verify_early_return(self, agent: str, q: np.ndarray, k: int, early: SearchResult):
        """Background full search compared against an early return."""
        cache = self.caches[agent]
        full = self._full_search(agent, list(self.clusters.by_scope), q, k)
        cache.verified_count += 1
        if early.ids != full.ids:
            cache.miss_count += 1
        if full.hits:
            cache.record_completed(float(np.mean([h[1] for h in full.hits])))

    def _full_search(self, agent, scopes, q, k) -> SearchResult:
        return self.search(
            agent,
            scopes,
            q,
            k,
            nprobe=max(len(self.clusters.clusters), 1),
            _internal=True,
            _no_cache=True,
        )

    def prefetch(self, agent: str, hint: PatternHint, k: int = 5):
        """Repopulate predicted cache entries ahead of the next access."""
        if hint.empty or hint.predicted_state is None:
            return
        key = hint.predicted_clusters[0] if hint.predicted_clusters else None
        cache = self.caches.get(agent)
        if cache is None or key is None or key in cache.l0:
            return  # already resident
        token = (agent, key)
        if token in self._prefetch_inflight:
            return
        self._prefetch_inflight.add(token)

        def run():
            try:
                target = hint.predicted_state.c
                res = self.search(
                    agent, list(self.clusters.by_scope), target, k, _internal=True
                )
                if res.hits and cache is not None:
                    items = [
                        (iid, self._vector_of(iid), self.scope_codes.intern(sc), False)
                        for iid, _, sc in res.hits
                        if self._vector_of(iid) is not None
                    ]
                    self._materialize(agent, cache.promote_to_l0(items, key))
            finally:
                self._prefetch_inflight.discard(token)

        self.runner.submit("cache", run)

    # --- mutation ---

    def insert(
        self,
        agent: str | None,
        scope: str,
        vectors,
        payloads: list[bytes] | None = None,
        ids: list[int] | None = None,
    ) -> list[int]:
        with self._serialized(agent):
            with self._lock.write():
                accepted = self._insert_impl(agent, scope, vectors, payloads, ids)
                self._tick(locked=True)
            return accepted

    def _insert_impl(self, agent, scope, vectors, payloads=None, ids=None) -> list[int]:
        self._check_writable(agent, scope)
        vecs = [as_vector(v, self.cfg.dimension) for v in vectors]
        if payloads is None:
            payloads = [b""] * len(vecs)
        if len(payloads) != len(vecs):
            raise UsageError("vectors and payloads must have equal length")
        if ids is not None:
            if len(ids) != len(vecs):
                raise UsageError("vectors and ids must have equal length")
            for iid in ids:
                if iid in self.clusters.owner:
                    raise UsageError(f"item id {iid} already live")
        accepted: list[int] = []
        for i, vec in enumerate(vecs):
            iid = self._take_id(ids[i] if ids is not None else None)
            payload = payloads[i]
            if isinstance(payload, str):
                payload = payload.encode("utf-8")
            self.payloads[iid] = payload
            cache = self.caches.get(agent) if (self.cfg.cache_enabled and agent) else None
            if cache is not None:
                state_key = self._state_key_for(agent, vec)
                self.clusters.stage_item(scope, iid, vec)
                outcomes = cache.promote_to_l0(
                    [(iid, vec, self.scope_codes.intern(scope), True)], state_key
                )
                self._materialize(agent, outcomes)
                self._append_sequence(agent, vec)
            else:
                self._direct_place(scope, iid, vec)
                if agent is not None:
                    self._append_sequence(agent, vec)
            accepted.append(iid)
        return accepted

    def _take_id(self, explicit: int | None) -> int:
        if explicit is None:
            iid = self._next_item_id
            self._next_item_id += 1
            return iid
        self._next_item_id = max(self._next_item_id, explicit + 1)
        return explicit

    def bulk_build(self, scope: str, vectors, payloads=None) -> list[int]:
        """One-shot IVF construction for a scope: k-means, then clusters."""
        with self._serialized(None), self._lock.write():
            return self._bulk_build_impl(scope, vectors, payloads)

    def _bulk_build_impl(self, scope: str, vectors, payloads=None) -> list[int]:
        self._check_writable(None, scope)
        mat = np.stack([as_vector(v, self.cfg.dimension) for v in vectors])
        n = len(mat)
        if n == 0:
            return []
        ids = [self._take_id(None) for _ in range(n)]
        if payloads is not None:
            for iid, p in zip(ids, payloads):
                self.payloads[iid] = p.encode("utf-8") if isinstance(p, str) else p
        k = max(1, -(-n // self.cfg.split_target))
        if k == 1:
            self.clusters.create_cluster(scope, list(zip(ids, mat)))
            return ids
        center = vector_mean(mat)
        spread = vector_spread(mat, center, Metric.SQUARED_EUCLIDEAN)
        labels, _ = kmeans_split_points(mat, k, self.rng, spread)
        id_arr = np.asarray(ids, dtype=np.int64)
        for c in range(int(labels.max()) + 1):
            rows = np.where(labels == c)[0]
            if len(rows) == 0:
                continue
            self.clusters.create_cluster(
                scope, [(int(id_arr[r]), mat[r]) for r in rows]
            )
        return ids

    def _direct_place(self, scope: str, item_id: int, vec: np.ndarray):
        cands = self.clusters.scope_clusters(scope)
        if not cands:
            self.clusters.create_cluster(scope, [(item_id, vec)])
            return
        cid = self.clusters.assign_nearest(vec, cands)
        self.tier.buffered_insert(cid, item_id, vec)
        self._after_cluster_mutation(cid)

    def _after_cluster_mutation(self, cid: int):
        if self.cfg.splits_enabled and self.clusters.needs_split(cid):
            self.tier.split_offload(cid)
        elif self.cfg.lazy_maintenance:
            self.clusters.maintenance(cid)

    def _materialize(self, agent: str | None, outcomes: list[MergeDownOutcome]):
        """Create base clusters from merged-down staged items."""
        for outcome in outcomes:
            for scope_code, items in outcome.staged.items():
                scope = self.scope_codes.name[scope_code]
                live = [
                    (iid, vec)
                    for iid, vec in items
                    if self.clusters.owner.get(iid) == ("staged", scope)
                ]
                if not live:
                    continue
                self.clusters.create_cluster(scope, live)
                self.clusters.consume_staged(scope, [iid for iid, _ in live])
                merged_ids = {iid for iid, _ in live}
                for cache in self.caches.values():
                    cache.mark_merged(merged_ids)

    def update(self, agent: str | None, item_id: int, vector=None, payload=None) -> bool:
        with self._serialized(agent), self._lock.write():
            owner = self.clusters.owner.get(item_id)
            if owner is None:
                return False
            scope = owner[1] if owner[0] == "staged" else self.clusters.clusters[owner[1]].scope
            self._check_writable(agent, scope)
            old_vec = self._vector_of(item_id)
            new_vec = as_vector(vector, self.cfg.dimension) if vector is not None else old_vec
            new_payload = payload if payload is not None else self.payloads.get(item_id, b"")
            # delete + reinsert under one lock: searches see old or new, never neither
            self._delete_internal(item_id)
            self._insert_impl(agent, scope, [new_vec], [new_payload], ids=[item_id])
            self._tick(locked=True)
            return True

    def delete(self, agent: str | None, item_id: int) -> bool:
        with self._serialized(agent), self._lock.write():
            owner = self.clusters.owner.get(item_id)
            if owner is None:
                return False
            scope = owner[1] if owner[0] == "staged" else self.clusters.clusters[owner[1]].scope
            self._check_writable(agent, scope)
            ok = self._delete_internal(item_id)
            self._tick(locked=True)
            return ok

    def _delete_internal(self, item_id: int) -> bool:
        owner = self.clusters.owner.get(item_id)
        if owner is None:
            return False
        if owner[0] == "cluster":
            cid = owner[1]
            self.clusters.delete_item(item_id)
            cl = self.clusters.clusters.get(cid)
            if cl is not None and self.cfg.lazy_maintenance:
                self.clusters.maintenance(cid)
        else:
            self.clusters.delete_item(item_id)
        for cache in self.caches.values():
            cache.drop_item(item_id)
        self.payloads.pop(item_id, None)
        return True

    def end_request(self, agent: str):
        """Complete the agent's current request: fold its sequence as an FSM."""
        if agent not in self.sequences:
            raise UsageError(f"unknown agent {agent!r}")
        seq = self.sequences[agent]
        if seq and self.cfg.pattern_enabled:
            self.patterns[agent].observe_completed(seq)
        self.sequences[agent] = []

    def _append_sequence(self, agent: str, v: np.ndarray):
        seq = self.sequences[agent]
        seq.append(v)
        if len(seq) > self.cfg.request_window:
            del seq[0]

    def flush_caches(self):
        """Merge every cache level down; afterwards L2 alone is complete."""
        with self._lock.write():
            for agent, cache in self.caches.items():
                self._materialize(agent, cache.flush())

    def _tick(self, locked: bool = False):
        self._op_count += 1
        if self._op_count % self.cfg.hotset_interval == 0 and self.cfg.accelerator != "none":
            if locked:
                self.tier.hotset_update()
            else:
                with self._lock.write():
                    self.tier.hotset_update()

    # --- item access ---

    def _vector_of(self, item_id: int) -> np.ndarray | None:
        owner = self.clusters.owner.get(item_id)
        if owner is None:
            return None
        if owner[0] == "staged":
            return self.clusters.staged[owner[1]].get(item_id)
        cl = self.clusters.clusters[owner[1]]
        row = cl.id_to_row.get(item_id)
        return cl.vectors[row].copy() if row is not None else None

    def get_item(self, item_id: int):
        vec = self._vector_of(item_id)
        if vec is None:
            return None
        owner = self.clusters.owner[item_id]
        scope = owner[1] if owner[0] == "staged" else self.clusters.clusters[owner[1]].scope
        return vec, self.payloads.get(item_id, b""), scope

    def live_count(self) -> int:
        return self.clusters.live_count()

    # --- splits ---

    def split_cluster(self, cid: int) -> SplitOutcome:
        return self.tier.split_offload(cid)

    # --- async surface ---

    def submit_batch(self, batch: OperationBatch):
        """Run a homogeneous batch; returns a future of the result list."""

        def run():
            out = []
            for op in batch.ops:
                if batch.kind == "search":
                    out.append(self.search(batch.agent, *op))
                elif batch.kind == "insert":
                    out.append(self.insert(batch.agent, *op))
                elif batch.kind == "update":
                    out.append(self.update(batch.agent, *op))
                else:
                    out.append(self.delete(batch.agent, *op))
            return out

        role = "search" if batch.kind == "search" else "update"
        return self.runner.submit(role, run)

    def submit_search(self, agent, scopes, q, k, nprobe=None):
        return self.runner.submit("search", self.search, agent, scopes, q, k, nprobe)

    def submit_insert(self, agent, scope, vectors, payloads=None):
        return self.runner.submit("update", self.insert, agent, scope, vectors, payloads)

    # --- persistence / ingestion ---

    def snapshot(self, path):
        persist.snapshot(self, path)

    @classmethod
    def restore(cls, path) -> "Store":
        return persist.restore(cls, path)

    def export_ivf(self, path, scopes=None):
        persist.export_clusters(self, path, scopes)

    def load_external_ivf(self, path, scope: str) -> int:
        return persist.load_external_ivf(self, path, scope)

    def ingest_fvecs(self, path, scope: str, limit: int | None = None) -> list[int]:
        vecs = persist.read_fvecs(path, self.cfg.dimension, limit)
        return self.insert(None, scope, vecs)

    def ingest_jsonl(self, path) -> int:
        count = 0
        for rec in persist.read_jsonl(path):
            self.insert(
                None,
                rec["scope"],
                [rec["vector"]],
                [rec.get("payload", "")],
                ids=[rec["id"]] if "id" in rec else None,
            )
            count += 1
        return count
