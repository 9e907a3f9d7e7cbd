"""Two-tier execution: hotset caching, insertion buffers, async migration.

The accelerator is pluggable. The default simulated accelerator performs
the same computation as the host (so results are exact) while accounting
latency through a cost model shaped like measured device behaviour: host
scans cost per vector, device scans are launch-dominated and flat. The
crossover of those two curves fixes the insertion-buffer size.

Host cluster rows are always the source of truth; a resident copy is a
device-side snapshot identified by item ids, and the buffer lists ids
inserted since that snapshot. A merged search therefore equals a single-
tier scan of the full member multiset in every migration phase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clusters import ClusterStore, SplitOutcome, kmeans_split_points
from .concurrency import TaskRunner
from .core import Metric, batch_distances

logger = logging.getLogger(__name__)


class AcceleratorError(RuntimeError):
    """Device-side failure; callers fall back to the host path."""


@dataclass
class CostModel:
    """Latency shape: linear host scans vs launch-dominated device scans."""

    host_per_vector_us: float = 0.5
    accel_launch_us: float = 64.0
    accel_per_vector_us: float = 0.0
    cross_tier_per_kb_us: float = 1.0
    tier_local_per_kb_us: float = 0.05
    alloc_us: float = 10.0

    def host_scan_us(self, n: int) -> float:
        return self.host_per_vector_us * n

    def accel_scan_us(self, n: int) -> float:
        return self.accel_launch_us + self.accel_per_vector_us * n


def derive_b_insert(model: CostModel, max_n: int = 1 << 20) -> int:
    """Largest scan size where the host is no slower than the device."""
    n = 0
    lo, hi = 0, max_n
    while lo <= hi:
        mid = (lo + hi) // 2
        if model.host_scan_us(mid) <= model.accel_scan_us(mid):
            n = mid
            lo = mid + 1
        else:
            hi = mid - 1
    return n


class HostExecutor:
    kind = "host"
    capabilities = frozenset({"scan", "kmeans"})

    def __init__(self, model: CostModel):
        self.model = model
        self.call_log: list[tuple] = []
        self.simulated_us = 0.0

    def scan(self, q: np.ndarray, mat: np.ndarray, metric: Metric) -> np.ndarray:
        self.call_log.append(("scan", len(mat)))
        self.simulated_us += self.model.host_scan_us(len(mat))
        return batch_distances(q, mat, metric)

    def kmeans(self, mat, k, rng, base_delta):
        self.call_log.append(("kmeans", len(mat), k))
        self.simulated_us += self.model.host_scan_us(len(mat)) * k
        return kmeans_split_points(mat, k, rng, base_delta)


class SimulatedAccelerator:
    """Host computation plus device-shaped latency and memory accounting."""

    kind = "accelerator"
    capabilities = frozenset({"scan", "kmeans"})

    def __init__(self, model: CostModel):
        self.model = model
        self.call_log: list[tuple] = []
        self.simulated_us = 0.0
        self._mem: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._next_handle = 0
        self.allocated_bytes = 0
        self.fail_next_alloc = False
        self.fail_next_scan = False

    def alloc(self, nbytes: int) -> int:
        if self.fail_next_alloc:
            self.fail_next_alloc = False
            raise AcceleratorError("allocation failed")
        handle = self._next_handle
        self._next_handle += 1
        self._mem[handle] = (np.empty((0, 0), dtype=np.float32), np.empty(0, dtype=np.int64))
        self.allocated_bytes += nbytes
        self.simulated_us += self.model.alloc_us
        self.call_log.append(("alloc", handle, nbytes))
        return handle

    def upload(self, handle: int, mat: np.ndarray, ids: np.ndarray, tier_local: bool):
        if handle not in self._mem:
            raise AcceleratorError(f"unknown handle {handle}")
        old_mat, old_ids = self._mem[handle]
        if old_mat.size:
            mat = np.vstack([old_mat, mat])
            ids = np.concatenate([old_ids, ids])
        self._mem[handle] = (mat.copy(), ids.copy())
        kb = mat.nbytes / 1024.0
        rate = self.model.tier_local_per_kb_us if tier_local else self.model.cross_tier_per_kb_us
        self.simulated_us += kb * rate
        self.call_log.append(("upload", handle, len(ids), tier_local))

    def release(self, handle: int, nbytes: int):
        self._mem.pop(handle, None)
        self.allocated_bytes -= nbytes
        self.call_log.append(("release", handle))

    def scan(self, handle: int, q: np.ndarray, metric: Metric) -> tuple[np.ndarray, np.ndarray]:
        if self.fail_next_scan:
            self.fail_next_scan = False
            raise AcceleratorError("device scan failed")
        if handle not in self._mem:
            raise AcceleratorError(f"unknown handle {handle}")
        mat, ids = self._mem[handle]
        self.call_log.append(("scan", handle, len(ids)))
        self.simulated_us += self.model.accel_scan_us(len(ids))
        if len(ids) == 0:
            return ids, np.empty(0, dtype=np.float32)
        return ids, batch_distances(q, mat, metric)

    def kmeans(self, mat, k, rng, base_delta):
        self.call_log.append(("kmeans", len(mat), k))
        self.simulated_us += self.model.accel_scan_us(len(mat)) * k
        return kmeans_split_points(mat, k, rng, base_delta)


@dataclass
class ResidentCopy:
    handle: int
    ids: np.ndarray  # snapshot item ids (may contain since-deleted ids)
    nbytes: int


class TicketAborted(Exception):
    pass


PHASES = ("Allocated", "Copying", "Switching", "Done")


@dataclass
class MigrationTicket:
    cid: int
    phase: str = "Pending"
    new_handle: int | None = None
    snap_ids: list[int] = field(default_factory=list)
    buffer_split: int = 0
    nbytes: int = 0
    aborted: bool = False


class TierManager:
    """Hotset selection, buffered inserts, merged search, migrations."""

    def __init__(
        self,
        store: ClusterStore,
        accelerator: SimulatedAccelerator | None,
        budget_bytes: int = 64 << 20,
        b_insert: int = 128,
        decay_half_life: int = 10000,
        slack_fraction: float = 0.25,
        hysteresis: float = 1.2,
        runner: TaskRunner | None = None,
        cost_model: CostModel | None = None,
    ):
        self.store = store
        self.model = cost_model or CostModel()
        self.host = HostExecutor(self.model)
        self.accel = accelerator
        self.budget_bytes = budget_bytes
        self.b_insert = b_insert
        self.decay_half_life = decay_half_life
        self.slack_fraction = slack_fraction
        self.hysteresis = hysteresis
        self.runner = runner or TaskRunner(0)
        self.freq: dict[int, tuple[float, int]] = {}  # cid -> (value, last clock)
        self.clock = 0
        self.hotset: set[int] = set()
        self.resident_bytes = 0
        self.inflight: dict[int, MigrationTicket] = {}
        self.flush_count = 0
        self.migration_us: list[float] = []

    # --- frequency tracking ---

    def record_access(self, cid: int):
        self.clock += 1
        value, last = self.freq.get(cid, (0.0, self.clock))
        decay = 0.5 ** ((self.clock - last) / self.decay_half_life)
        self.freq[cid] = (value * decay + 1.0, self.clock)

    def decayed_freq(self, cid: int) -> float:
        value, last = self.freq.get(cid, (0.0, self.clock))
        return value * (0.5 ** ((self.clock - last) / self.decay_half_life))

    # --- hotset ---

    def hotset_update(self) -> list[tuple[str, int]]:
        """Greedy admission by decayed frequency with eviction hysteresis."""
        if self.accel is None:
            return []
        live = [cid for cid in self.store.clusters if self.store.clusters[cid].size > 0]
        ranked = sorted(live, key=lambda c: (-self.decayed_freq(c), c))
        actions: list[tuple[str, int]] = []
        target: list[int] = []
        used = 0
        for cid in ranked:
            nb = self.store.clusters[cid].nbytes
            if nb == 0 or self.decayed_freq(cid) <= 0.0:
                continue
            if used + nb <= self.budget_bytes:
                target.append(cid)
                used += nb
        if not target and live:
            smallest = min(
                (self.store.clusters[c].nbytes for c in live if self.store.clusters[c].nbytes),
                default=0,
            )
            if smallest and smallest > self.budget_bytes:
                logger.warning(
                    "accelerator budget %d below smallest cluster %d; hotset empty",
                    self.budget_bytes,
                    smallest,
                )

        target_set = set(target)
        for cid in sorted(self.hotset - target_set):
            # hysteresis: evict only when displaced by a clearly hotter one
            displacers = [c for c in target_set - self.hotset]
            if displacers:
                hottest = max(self.decayed_freq(c) for c in displacers)
                if hottest < self.hysteresis * self.decayed_freq(cid):
                    target_set.add(cid)
                    continue
            actions.append(("evict", cid))
            self._evict(cid)
        for cid in sorted(target_set - self.hotset):
            if cid in self.inflight:
                continue
            actions.append(("admit", cid))
            self._start_migration(cid)
        return actions

    def _evict(self, cid: int):
        cl = self.store.clusters.get(cid)
        self.hotset.discard(cid)
        if cl is None or cl.resident is None:
            return
        self.accel.release(cl.resident.handle, cl.resident.nbytes)
        self.resident_bytes -= cl.resident.nbytes
        cl.resident = None
        cl.buffer = []

    # --- insertion path ---

    def buffered_insert(self, cid: int, item_id: int, vector: np.ndarray) -> str:
        """Insert into the cluster; buffer when it is accelerator-resident."""
        cl = self.store.clusters[cid]
        self.store.add_member(cid, item_id, vector)
        if cl.resident is None and cid not in self.inflight:
            return "DirectHost"
        cl.buffer.append(item_id)
        if len(cl.buffer) >= self.b_insert and cid not in self.inflight:
            self.flush_count += 1
            self._start_migration(cid)
        return "BufferedHost"

    # --- search path ---

    def merged_search(
        self, cid: int, q: np.ndarray, metric: Metric
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Distances over the full member multiset; (ids, dists, scanned).

        Device scan covers the resident snapshot (filtered to live ids not
        shadowed by the buffer); host scans the buffered rows. Falls back to
        a full host scan when there is no resident copy or the device fails.
        """
        cl = self.store.clusters[cid]
        if cl.resident is None:
            d = self.host.scan(q, cl.vectors, metric)
            return cl.member_ids.copy(), d, cl.size
        try:
            snap_ids, snap_d = self.accel.scan(cl.resident.handle, q, metric)
        except AcceleratorError:
            d = self.host.scan(q, cl.vectors, metric)
            return cl.member_ids.copy(), d, cl.size
        buffered = set(cl.buffer)
        keep = [
            i
            for i, iid in enumerate(snap_ids.tolist())
            if iid in cl.id_to_row and iid not in buffered
        ]
        ids = [int(snap_ids[i]) for i in keep]
        dists = [float(snap_d[i]) for i in keep]
        scanned = len(snap_ids)
        if cl.buffer:
            rows = [cl.id_to_row[i] for i in cl.buffer]
            mat = cl.vectors[rows]
            d = self.host.scan(q, mat, metric)
            ids.extend(int(i) for i in cl.buffer)
            dists.extend(float(x) for x in d)
            scanned += len(rows)
        return np.asarray(ids, dtype=np.int64), np.asarray(dists, dtype=np.float32), scanned

    # --- migration state machine ---

    def _start_migration(self, cid: int) -> MigrationTicket:
        ticket = MigrationTicket(cid=cid)
        self.inflight[cid] = ticket
        if self.runner.inline:
            self.run_migration(ticket)
        else:
            self.runner.submit("device", self.run_migration, ticket)
        return ticket

    def run_migration(self, ticket: MigrationTicket):
        while ticket.phase not in ("Done", "Aborted"):
            self.step_migration(ticket)

    def step_migration(self, ticket: MigrationTicket):
        """Advance one phase; searches stay answerable in every phase."""
        cl = self.store.clusters.get(ticket.cid)
        if cl is None:
            ticket.phase = "Aborted"
            self.inflight.pop(ticket.cid, None)
            return
        if ticket.phase == "Pending":
            start_us = self.accel.simulated_us
            ticket.snap_ids = cl.member_ids.tolist()
            ticket.buffer_split = len(cl.buffer)
            nbytes = int(len(ticket.snap_ids) * cl.dimension * 4 * (1 + self.slack_fraction))
            try:
                ticket.new_handle = self.accel.alloc(nbytes)
            except AcceleratorError:
                self._abort(ticket, cl)
                return
            ticket.nbytes = nbytes
            ticket._start_us = start_us
            ticket.phase = "Allocated"
        elif ticket.phase == "Allocated":
            old_covered = (
                set(cl.resident.ids.tolist()) if cl.resident is not None else set()
            )
            snap = [iid for iid in ticket.snap_ids if iid in cl.id_to_row]
            local = [iid for iid in snap if iid in old_covered]
            cross = [iid for iid in snap if iid not in old_covered]
            for chunk, tier_local in ((local, True), (cross, False)):
                if not chunk:
                    continue
                rows = [cl.id_to_row[iid] for iid in chunk]
                self.accel.upload(
                    ticket.new_handle,
                    cl.vectors[rows],
                    np.asarray(chunk, dtype=np.int64),
                    tier_local=tier_local,
                )
            ticket.phase = "Copying"
        elif ticket.phase == "Copying":
            ticket.phase = "Switching"
        elif ticket.phase == "Switching":
            old = cl.resident
            mat, ids = self.accel._mem.get(
                ticket.new_handle, (np.empty((0, 0)), np.empty(0, dtype=np.int64))
            )
            cl.resident = ResidentCopy(ticket.new_handle, ids, ticket.nbytes)
            self.resident_bytes += ticket.nbytes
            if old is not None:
                self.accel.release(old.handle, old.nbytes)
                self.resident_bytes -= old.nbytes
            cl.buffer = cl.buffer[ticket.buffer_split :]
            self.hotset.add(ticket.cid)
            self.inflight.pop(ticket.cid, None)
            ticket.phase = "Done"
            self.migration_us.append(self.accel.simulated_us - getattr(ticket, "_start_us", 0.0))
            if len(cl.buffer) >= self.b_insert:
                self.flush_count += 1
                self._start_migration(ticket.cid)

    def _abort(self, ticket: MigrationTicket, cl):
        """Failed migration: drop residency so the host serves everything."""
        ticket.aborted = True
        ticket.phase = "Aborted"
        if ticket.new_handle is not None:
            self.accel.release(ticket.new_handle, ticket.nbytes)
        if cl.resident is not None:
            self.accel.release(cl.resident.handle, cl.resident.nbytes)
            self.resident_bytes -= cl.resident.nbytes
            cl.resident = None
        cl.buffer = []
        self.hotset.discard(ticket.cid)
        self.inflight.pop(ticket.cid, None)

    # --- splitting ---

    def split_offload(self, cid: int) -> SplitOutcome:
        """Split on the cluster's resident executor; host otherwise."""
        cl = self.store.clusters[cid]
        executor = self.accel if (cl.resident is not None and self.accel) else self.host
        was_resident = cl.resident is not None
        if was_resident:
            self._evict(cid)
        outcome = self.store.split_cluster(cid, executor)
        self.freq.pop(cid, None)
        if was_resident:
            parent_freq = self.decayed_freq(cid)
            for child in outcome.children:
                self.freq[child] = (parent_freq / max(len(outcome.children), 1), self.clock)
            self.hotset_update()
        return outcome

    # --- metrics ---

    def metrics(self) -> dict:
        live = [c for c in self.store.clusters.values() if c.size > 0]
        resident = sum(1 for c in live if c.resident is not None)
        return {
            "residency_ratio": resident / len(live) if live else 0.0,
            "buffer_flush_count": self.flush_count,
            "migration_us": list(self.migration_us),
            "resident_bytes": self.resident_bytes,
            "host_us": self.host.simulated_us,
            "accel_us": self.accel.simulated_us if self.accel else 0.0,
        }
