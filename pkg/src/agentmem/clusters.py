"""Cluster ownership: the L2 base level, staging for cache-resident items,
and size-triggered k-means splitting.

Every live item is owned exactly once: either as a member row of one L2
cluster or as a staged entry awaiting merge-down from the per-agent cache
levels. Cached copies at L0/L1 are never ownership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .concurrency import RWLock
from .core import Metric, UsageError, batch_distances, centroid, deviation


@dataclass
class SplitOutcome:
    retired: int
    children: list[int]
    reassignment: dict[int, int]  # item-id -> child cluster id


class Cluster:
    """Centroid + member rows + deviation + per-agent profiles + residency."""

    def __init__(self, cid: int, scope: str, dimension: int):
        self.id = cid
        self.scope = scope
        self.dimension = dimension
        self._cap = 16
        self._mat = np.zeros((self._cap, dimension), dtype=np.float32)
        self._ids = np.zeros(self._cap, dtype=np.int64)
        self.size = 0
        self.id_to_row: dict[int, int] = {}
        self.centroid = np.zeros(dimension, dtype=np.float32)
        self.delta = 0.0
        self.dirty = 0  # mutations since last stats recompute
        self.access_count = 0
        self.profiles: dict[str, list[int]] = {}  # agent -> MRU local ids
        self.resident = None  # tiering.ResidentCopy when accelerator-cached
        self.buffer: list[int] = []  # item ids pending device flush
        self.lock = RWLock()

    @property
    def vectors(self) -> np.ndarray:
        return self._mat[: self.size]

    @property
    def member_ids(self) -> np.ndarray:
        return self._ids[: self.size]

    @property
    def nbytes(self) -> int:
        return self.size * self.dimension * 4

    def _grow(self, needed: int):
        if needed <= self._cap:
            return
        cap = max(int(self._cap * 1.5), needed)
        mat = np.zeros((cap, self.dimension), dtype=np.float32)
        mat[: self.size] = self._mat[: self.size]
        ids = np.zeros(cap, dtype=np.int64)
        ids[: self.size] = self._ids[: self.size]
        self._mat, self._ids, self._cap = mat, ids, cap

    def add(self, item_id: int, vector: np.ndarray) -> int:
        self._grow(self.size + 1)
        row = self.size
        self._mat[row] = vector
        self._ids[row] = item_id
        self.id_to_row[item_id] = row
        self.size += 1
        self.dirty += 1
        return row

    def remove(self, item_id: int) -> int | None:
        """Swap-with-last compaction; returns the moved item id, if any."""
        row = self.id_to_row.pop(item_id, None)
        if row is None:
            return None
        last = self.size - 1
        moved = None
        if row != last:
            moved = int(self._ids[last])
            self._mat[row] = self._mat[last]
            self._ids[row] = moved
            self.id_to_row[moved] = row
        self.size -= 1
        self.dirty += 1
        self.buffer = [i for i in self.buffer if i != item_id]
        # profile entries track local ids; drop the dead row, remap the moved one
        for agent in list(self.profiles):
            entries = []
            for lid in self.profiles[agent]:
                if lid == row and moved is None:
                    continue
                if lid == last and moved is not None:
                    lid = row
                elif lid == row:
                    continue
                if lid < self.size:
                    entries.append(lid)
            self.profiles[agent] = entries
        return moved

    def recompute_stats(self, metric: Metric):
        if self.size == 0:
            self.delta = 0.0
            self.dirty = 0
            return
        self.centroid = centroid(self.vectors)
        self.delta = deviation(self.vectors, self.centroid, metric)
        self.dirty = 0


def kmeans_split_points(
    mat: np.ndarray,
    k: int,
    rng: np.random.Generator,
    base_delta: float,
    max_iters: int = 10,
    tol_factor: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Single k-means run with k-means++ seeding; returns (labels, centers).

    Duplicate seeds (degenerate inputs) get 1e-6-scale jitter; clusters that
    still come out empty are reseeded so the output always has k non-empty
    parts whenever k <= number of points.
    """
    n = len(mat)
    k = min(k, n)
    centers = np.empty((k, mat.shape[1]), dtype=np.float32)
    first = int(rng.integers(n))
    centers[0] = mat[first]
    d2 = kernels.sq_l2(centers[0], mat).astype(np.float64)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = mat[idx]
        d2 = np.minimum(d2, kernels.sq_l2(centers[i], mat).astype(np.float64))

    # perturb exact duplicates so assignment can separate them
    jitter_scale = 1e-6 * (base_delta if base_delta > 0 else 1.0)
    for i in range(1, k):
        if any(np.array_equal(centers[i], centers[j]) for j in range(i)):
            centers[i] = centers[i] + rng.normal(0.0, jitter_scale, mat.shape[1]).astype(
                np.float32
            )

    labels = np.zeros(n, dtype=np.int64)
    tol = tol_factor * max(base_delta, 1e-12)
    for _ in range(max_iters):
        labels, _ = kernels.kmeans_assign(mat, centers)
        new_centers = centers.copy()
        for c in range(k):
            sel = labels == c
            if sel.any():
                new_centers[c] = mat[sel].mean(axis=0, dtype=np.float64).astype(np.float32)
            else:
                far = int(np.argmax(kernels.sq_l2(centers[c], mat)))
                new_centers[c] = mat[far]
        shift = new_centers - centers
        movement = float(np.max(np.sqrt(np.einsum("ij,ij->i", shift, shift))))
        centers = new_centers
        if movement < tol:
            break
    labels, _ = kernels.kmeans_assign(mat, centers)
    # guarantee no empty part: steal one point for each empty label
    for c in range(k):
        if not (labels == c).any():
            counts = np.bincount(labels, minlength=k)
            donor = int(np.argmax(counts))
            take = int(np.where(labels == donor)[0][0])
            labels[take] = c
    return labels, centers


class ClusterStore:
    """Owns clusters and staged items; single source of item ownership."""

    def __init__(
        self,
        dimension: int,
        metric: Metric,
        rng: np.random.Generator,
        split_threshold: int = 4096,
        split_target: int = 2048,
        maintenance_interval: int = 256,
    ):
        self.dimension = dimension
        self.metric = metric
        self.rng = rng
        self.split_threshold = split_threshold
        self.split_target = split_target
        self.maintenance_interval = maintenance_interval
        self.clusters: dict[int, Cluster] = {}
        self.by_scope: dict[str, dict[int, None]] = {}
        self.split_memos: dict[int, SplitOutcome] = {}
        self.staged: dict[str, dict[int, np.ndarray]] = {}
        self.owner: dict[int, tuple[str, object]] = {}  # item -> ("cluster", cid) | ("staged", scope)
        self._next_cid = 0
        self.on_cluster_created = None  # callable(cluster)
        self.on_cluster_retired = None  # callable(cluster)

    def register_scope(self, scope: str):
        self.by_scope.setdefault(scope, {})
        self.staged.setdefault(scope, {})

    def scope_clusters(self, scope: str) -> list[int]:
        return list(self.by_scope.get(scope, {}))

    def live_count(self) -> int:
        return len(self.owner)

    # --- ownership ---

    def stage_item(self, scope: str, item_id: int, vector: np.ndarray):
        if scope not in self.by_scope:
            raise UsageError(f"unknown scope {scope!r}")
        self.staged[scope][item_id] = vector
        self.owner[item_id] = ("staged", scope)

    def unstage(self, scope: str, item_id: int) -> np.ndarray | None:
        v = self.staged[scope].pop(item_id, None)
        if v is not None:
            self.owner.pop(item_id, None)
        return v

    def consume_staged(self, scope: str, item_ids: list[int]):
        """Drop staging entries whose ownership moved to a cluster."""
        for item_id in item_ids:
            self.staged[scope].pop(item_id, None)

    def add_member(self, cid: int, item_id: int, vector: np.ndarray) -> int:
        cl = self.clusters[cid]
        row = cl.add(item_id, vector)
        self.owner[item_id] = ("cluster", cid)
        return row

    # --- operations ---

    def create_cluster(self, scope: str, seed_items: list[tuple[int, np.ndarray]]) -> int:
        if scope not in self.by_scope:
            raise UsageError(f"unknown scope {scope!r}")
        if not seed_items:
            raise UsageError("create_cluster needs at least one seed item")
        cid = self._next_cid
        self._next_cid += 1
        cl = Cluster(cid, scope, self.dimension)
        for item_id, vec in seed_items:
            cl.add(item_id, vec)
            self.owner[item_id] = ("cluster", cid)
        cl.recompute_stats(self.metric)
        self.clusters[cid] = cl
        self.by_scope[scope][cid] = None
        if self.on_cluster_created:
            self.on_cluster_created(cl)
        return cid

    def assign_nearest(self, vector: np.ndarray, candidates: list[int]) -> int:
        if not candidates:
            raise UsageError("assign_nearest needs at least one candidate")
        cents = np.stack([self.clusters[c].centroid for c in candidates])
        d = batch_distances(vector, cents, self.metric)
        best = math.inf
        best_cid = None
        for cid, dist in zip(candidates, d):
            dist = float(dist)
            if dist < best or (dist == best and cid < best_cid):
                best, best_cid = dist, cid
        return best_cid

    def delete_item(self, item_id: int) -> bool:
        owner = self.owner.get(item_id)
        if owner is None:
            return False
        kind, where = owner
        if kind == "staged":
            self.unstage(where, item_id)
            return True
        cl = self.clusters[where]
        cl.remove(item_id)
        self.owner.pop(item_id, None)
        return True

    def maintenance(self, cid: int, force: bool = False):
        cl = self.clusters.get(cid)
        if cl is None:
            return
        if force or cl.dirty >= self.maintenance_interval:
            cl.recompute_stats(self.metric)

    def needs_split(self, cid: int) -> bool:
        cl = self.clusters.get(cid)
        return cl is not None and cl.size >= self.split_threshold

    def split_cluster(self, cid: int, executor=None) -> SplitOutcome:
        if cid in self.split_memos:
            return self.split_memos[cid]  # concurrent split: observe the first
        cl = self.clusters.get(cid)
        if cl is None:
            raise UsageError(f"unknown cluster {cid}")
        if cl.size < self.split_threshold:
            raise UsageError(
                f"cluster {cid} below split threshold ({cl.size} < {self.split_threshold})"
            )
        cl.recompute_stats(self.metric)
        mat = cl.vectors.copy()
        ids = cl.member_ids.copy()
        k = max(2, math.ceil(cl.size / self.split_target))
        if executor is not None:
            labels, _ = executor.kmeans(mat, k, self.rng, cl.delta)
        else:
            labels, _ = kmeans_split_points(mat, k, self.rng, cl.delta)

        # children in the same scope; profiles follow their vectors
        children: list[int] = []
        reassignment: dict[int, int] = {}
        child_profiles: list[dict[str, list[int]]] = []
        for c in range(int(labels.max()) + 1):
            rows = np.where(labels == c)[0]
            if len(rows) == 0:
                continue
            seed = [(int(ids[r]), mat[r]) for r in rows]
            row_to_child_lid = {int(r): lid for lid, r in enumerate(rows)}
            profs: dict[str, list[int]] = {}
            for agent, entries in cl.profiles.items():
                mapped = [row_to_child_lid[lid] for lid in entries if lid in row_to_child_lid]
                if mapped:
                    profs[agent] = mapped
            child_cid = self.create_cluster(cl.scope, seed)
            children.append(child_cid)
            child_profiles.append(profs)
            for r in rows:
                reassignment[int(ids[r])] = child_cid
        for child_cid, profs in zip(children, child_profiles):
            self.clusters[child_cid].profiles = profs

        outcome = SplitOutcome(retired=cid, children=children, reassignment=reassignment)
        self.split_memos[cid] = outcome
        self.retire_cluster(cid, drop_members=False)
        return outcome

    def retire_cluster(self, cid: int, drop_members: bool = True):
        cl = self.clusters.pop(cid, None)
        if cl is None:
            return
        self.by_scope[cl.scope].pop(cid, None)
        if drop_members:
            for item_id in cl.member_ids.tolist():
                if self.owner.get(item_id) == ("cluster", cid):
                    self.owner.pop(item_id, None)
        if self.on_cluster_retired:
            self.on_cluster_retired(cl)
