"""Finite-state-machine models of per-agent memory access sequences.

A pattern is a set of states (centroid, deviation) plus directed transitions
recording observed movement between them. Incoming request prefixes are
scored against each pattern by prefix-state alignment and transition
consistency; the best match predicts the next state, which drives cache
reordering and prefetching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Metric, batch_distances, deviation


@dataclass
class FsmState:
    c: np.ndarray
    delta: float
    hits: int = 0
    count: int = 1  # accesses folded into this state; weights merges


@dataclass
class PatternHint:
    """Prediction for the next access; empty when no pattern matched."""

    matched_fsm: int | None = None
    predicted_state: FsmState | None = None
    predicted_state_idx: int | None = None
    predicted_clusters: list = field(default_factory=list)
    score: float = 0.0

    @property
    def empty(self) -> bool:
        return self.matched_fsm is None


class AccessPatternFsm:
    """States plus directed transitions with observation counts."""

    def __init__(
        self,
        states: list[FsmState],
        transition_counts: dict[tuple[int, int], int],
        entry_counts: list[int],
        d_merge: float = 0.0,
    ):
        self.states = states
        self.transition_counts = transition_counts
        self.entry_counts = entry_counts
        self.d_merge = d_merge

    @property
    def transitions(self) -> set[tuple[int, int]]:
        return set(self.transition_counts)

    def align(self, v: np.ndarray, metric: Metric) -> int:
        """Index of the state whose centroid is nearest to v (ties: lower)."""
        cents = np.stack([s.c for s in self.states])
        return int(np.argmin(batch_distances(v, cents, metric)))

    def similarity(self, prefix: list[np.ndarray], metric: Metric) -> float:
        """Prefix-state alignment and transition-consistency score.

        Each access v_k aligns to its nearest state; the k-th term counts
        only when the aligned pair (k-1 -> k) is a recorded transition, with
        the first term gated on the aligned state having been a sequence
        start. Term weight is the state deviation shrunk by alignment error.
        """
        if not self.states:
            return 0.0
        score = 0.0
        prev = None
        for v in prefix:
            idx = self.align(v, metric)
            st = self.states[idx]
            if prev is None:
                ok = self.entry_counts[idx] > 0
            else:
                ok = (prev, idx) in self.transition_counts
            if ok:
                d = float(batch_distances(v, st.c[None, :], metric)[0])
                score += st.delta / (1.0 + d)
            prev = idx
        return score

    def successor(self, idx: int) -> int | None:
        """Most frequently observed successor of a state (ties: lower)."""
        best, best_n = None, 0
        for (i, j), n in self.transition_counts.items():
            if i != idx:
                continue
            if n > best_n or (n == best_n and best is not None and j < best):
                best, best_n = j, n
        return best

    def mean_delta(self) -> float:
        if not self.states:
            return 0.0
        return float(np.mean([s.delta for s in self.states]))

    def fold(self, sequence: list[np.ndarray], metric: Metric) -> None:
        """Absorb a completed on-pattern request: hits, entries, transitions."""
        prev = None
        for v in sequence:
            idx = self.align(v, metric)
            self.states[idx].hits += 1
            self.states[idx].count += 1
            if prev is None:
                self.entry_counts[idx] += 1
            else:
                key = (prev, idx)
                self.transition_counts[key] = self.transition_counts.get(key, 0) + 1
            prev = idx


def _merge_pair(
    states: list[dict],
    transition_counts: dict[tuple[int, int], int],
    entry_counts: list[int],
    i: int,
    j: int,
    metric: Metric,
) -> tuple[list[dict], dict, list[int]]:
    """Merge state j into state i and reindex everything above j."""
    a, b = states[i], states[j]
    total = a["count"] + b["count"]
    c = (a["c"].astype(np.float64) * a["count"] + b["c"].astype(np.float64) * b["count"]) / total
    c = c.astype(np.float32)
    if a["members"] is not None and b["members"] is not None:
        members = a["members"] + b["members"]
        delta = deviation(np.stack(members), c, metric)
    else:
        # summary-only states: compose deviations through second moments
        members = None
        da = float(batch_distances(a["c"], c[None, :], metric)[0])
        db = float(batch_distances(b["c"], c[None, :], metric)[0])
        if metric is Metric.SQUARED_EUCLIDEAN:
            da, db = math.sqrt(max(da, 0.0)), math.sqrt(max(db, 0.0))
        delta = math.sqrt(
            max(
                (a["count"] * (a["delta"] ** 2 + da**2) + b["count"] * (b["delta"] ** 2 + db**2))
                / total,
                0.0,
            )
        )
    merged = {"c": c, "delta": delta, "hits": a["hits"] + b["hits"], "count": total, "members": members}

    remap = {}
    for k in range(len(states)):
        if k == j:
            remap[k] = i
        elif k > j:
            remap[k] = k - 1
        else:
            remap[k] = k
    new_states = [s for k, s in enumerate(states) if k != j]
    new_states[i] = merged
    new_tc: dict[tuple[int, int], int] = {}
    for (u, v), n in transition_counts.items():
        key = (remap[u], remap[v])
        new_tc[key] = new_tc.get(key, 0) + n
    new_entries = [0] * len(new_states)
    for k, n in enumerate(entry_counts):
        new_entries[remap[k]] += n
    return new_states, new_tc, new_entries


def _closest_pair(states: list[dict], metric: Metric) -> tuple[int, int, float]:
    cents = np.stack([s["c"] for s in states])
    best = (0, 1, math.inf)
    for i in range(len(states) - 1):
        d = batch_distances(cents[i], cents[i + 1 :], metric)
        j = int(np.argmin(d))
        if float(d[j]) < best[2]:
            best = (i, i + 1 + j, float(d[j]))
    return best


def _condense(
    states: list[dict],
    transition_counts: dict,
    entry_counts: list[int],
    n_s: int,
    d_merge: float,
    metric: Metric,
) -> tuple[list[dict], dict, list[int]]:
    while len(states) > 1:
        i, j, d = _closest_pair(states, metric)
        # exact duplicates always collapse, even when d_merge is zero
        if len(states) <= n_s and d > d_merge and d > 0.0:
            break
        states, transition_counts, entry_counts = _merge_pair(
            states, transition_counts, entry_counts, i, j, metric
        )
    return states, transition_counts, entry_counts


def build_fsm(
    sequence: list[np.ndarray],
    n_s: int,
    metric: Metric,
    d_merge: float | None = None,
    d_merge_factor: float = 0.5,
) -> AccessPatternFsm:
    """Construct an FSM from one request: one state per access, then merge.

    States are merged closest-pair-first while the count exceeds n_s or the
    closest pair is nearer than d_merge (default: d_merge_factor times the
    median pairwise distance of the sequence).
    """
    if not sequence:
        raise ValueError("request sequence must be non-empty")
    if d_merge is None:
        if len(sequence) >= 2:
            mat = np.stack(sequence)
            dists = []
            for i in range(len(mat) - 1):
                dists.extend(batch_distances(mat[i], mat[i + 1 :], metric).tolist())
            d_merge = d_merge_factor * float(np.median(dists))
        else:
            d_merge = 0.0

    states = [
        {"c": v.astype(np.float32), "delta": 0.0, "hits": 1, "count": 1, "members": [v]}
        for v in sequence
    ]
    tc: dict[tuple[int, int], int] = {}
    for k in range(len(sequence) - 1):
        tc[(k, k + 1)] = tc.get((k, k + 1), 0) + 1
    entries = [0] * len(states)
    entries[0] = 1

    states, tc, entries = _condense(states, tc, entries, n_s, d_merge, metric)
    return AccessPatternFsm(
        [FsmState(s["c"], s["delta"], s["hits"], s["count"]) for s in states],
        tc,
        entries,
        d_merge,
    )


def merge_fsms(a: AccessPatternFsm, b: AccessPatternFsm, n_s: int, metric: Metric) -> AccessPatternFsm:
    """Union the two state sets, then condense with the same merge rule."""
    states = [
        {"c": s.c, "delta": s.delta, "hits": s.hits, "count": s.count, "members": None}
        for s in a.states + b.states
    ]
    off = len(a.states)
    tc = dict(a.transition_counts)
    for (i, j), n in b.transition_counts.items():
        key = (i + off, j + off)
        tc[key] = tc.get(key, 0) + n
    entries = list(a.entry_counts) + list(b.entry_counts)
    d_merge = max(a.d_merge, b.d_merge)

    states, tc, entries = _condense(states, tc, entries, n_s, d_merge, metric)
    return AccessPatternFsm(
        [FsmState(s["c"], s["delta"], s["hits"], s["count"]) for s in states],
        tc,
        entries,
        d_merge,
    )


def fsm_pair_similarity(a: AccessPatternFsm, b: AccessPatternFsm, metric: Metric) -> float:
    """Symmetrized mean best-state affinity, kernel 1/(1 + distance)."""
    if not a.states or not b.states:
        return 0.0

    def one_way(x: AccessPatternFsm, y: AccessPatternFsm) -> float:
        cents = np.stack([s.c for s in y.states])
        total = 0.0
        for s in x.states:
            d = batch_distances(s.c, cents, metric)
            total += 1.0 / (1.0 + float(np.min(d)))
        return total / len(x.states)

    return 0.5 * (one_way(a, b) + one_way(b, a))


class PatternTable:
    """At most n_p FSMs for one agent, updated at request completion."""

    def __init__(
        self,
        n_p: int = 16,
        n_s: int = 8,
        metric: Metric = Metric.SQUARED_EUCLIDEAN,
        theta_match: float = 0.5,
        d_merge_factor: float = 0.5,
    ):
        self.n_p = n_p
        self.n_s = n_s
        self.metric = metric
        self.theta_match = theta_match
        self.d_merge_factor = d_merge_factor
        self.fsms: list[AccessPatternFsm] = []

    def _threshold(self, fsm: AccessPatternFsm, t: int) -> float:
        # scale-relative: theta times the perfect on-pattern score, which is
        # t * delta at zero alignment error
        return self.theta_match * t * fsm.mean_delta()

    def match(self, prefix: list[np.ndarray]) -> tuple[int | None, float]:
        """Best-matching FSM index, or None when below threshold."""
        if not prefix or not self.fsms:
            return None, 0.0
        best_idx, best_score = None, 0.0
        for i, f in enumerate(self.fsms):
            s = f.similarity(prefix, self.metric)
            if s > best_score:
                best_idx, best_score = i, s
        if best_idx is None:
            return None, 0.0
        if best_score < self._threshold(self.fsms[best_idx], len(prefix)):
            return None, 0.0
        return best_idx, best_score

    def match_and_predict(
        self,
        prefix: list[np.ndarray],
        l1_clusters: list[tuple[object, np.ndarray]] | None = None,
    ) -> PatternHint:
        """Hint for the next access: predicted state plus cache cluster keys.

        l1_clusters pairs a cache cluster key with its centroid; the nearest
        to the predicted state joins the hint after the L0 entry key.
        """
        idx, score = self.match(prefix)
        if idx is None:
            return PatternHint()
        fsm = self.fsms[idx]
        cur = fsm.align(prefix[-1], self.metric)
        nxt = fsm.successor(cur)
        if nxt is None:
            return PatternHint(matched_fsm=idx, score=score)
        state = fsm.states[nxt]
        clusters: list = [(idx, nxt)]  # L0 entries are keyed by (fsm, state)
        if l1_clusters:
            cents = np.stack([c for _, c in l1_clusters])
            j = int(np.argmin(batch_distances(state.c, cents, self.metric)))
            clusters.append(l1_clusters[j][0])
        return PatternHint(
            matched_fsm=idx,
            predicted_state=state,
            predicted_state_idx=nxt,
            predicted_clusters=clusters,
            score=score,
        )

    def observe_completed(self, sequence: list[np.ndarray]) -> None:
        """Fold a completed request into the table, keeping it within n_p."""
        if not sequence:
            return
        idx, _ = self.match(sequence)
        if idx is not None:
            self.fsms[idx].fold(sequence, self.metric)
            return
        self.fsms.append(
            build_fsm(sequence, self.n_s, self.metric, d_merge_factor=self.d_merge_factor)
        )
        while len(self.fsms) > self.n_p:
            best = (0, 1, -1.0)
            for i in range(len(self.fsms) - 1):
                for j in range(i + 1, len(self.fsms)):
                    s = fsm_pair_similarity(self.fsms[i], self.fsms[j], self.metric)
                    if s > best[2]:
                        best = (i, j, s)
            i, j, _ = best
            merged = merge_fsms(self.fsms[i], self.fsms[j], self.n_s, self.metric)
            self.fsms = [f for k, f in enumerate(self.fsms) if k not in (i, j)]
            self.fsms.append(merged)

    def debug_dump(self) -> str:
        """Plain-text adjacency listing with centroid norms."""
        lines = []
        for fi, f in enumerate(self.fsms):
            lines.append(f"fsm {fi}: {len(f.states)} states d_merge={f.d_merge:.6g}")
            for si, s in enumerate(f.states):
                succ = sorted(j for (i, j) in f.transition_counts if i == si)
                lines.append(
                    f"  state {si}: |c|={float(np.linalg.norm(s.c)):.6g} "
                    f"delta={s.delta:.6g} hits={s.hits} entries={f.entry_counts[si]} "
                    f"-> {succ}"
                )
        return "\n".join(lines)
