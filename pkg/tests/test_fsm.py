import math

import numpy as np
import pytest

from agentmem.core import Metric
from agentmem.fsm import (
    AccessPatternFsm,
    FsmState,
    PatternTable,
    build_fsm,
    fsm_pair_similarity,
    merge_fsms,
)

SQ = Metric.SQUARED_EUCLIDEAN


def vecs(rows):
    return [np.array(r, dtype=np.float32) for r in rows]


def sim_reference(fsm: AccessPatternFsm, prefix) -> float:
    """Independent straight-line reimplementation of the similarity score."""
    if not fsm.states:
        return 0.0
    score = 0.0
    prev = None
    for v in prefix:
        best, best_d = 0, math.inf
        for i, st in enumerate(fsm.states):
            d = sum((float(a) - float(b)) ** 2 for a, b in zip(st.c, v))
            if d < best_d:
                best, best_d = i, d
        if prev is None:
            ok = fsm.entry_counts[best] > 0
        else:
            ok = (prev, best) in fsm.transition_counts
        if ok:
            score += fsm.states[best].delta / (1.0 + best_d)
        prev = best
    return score


def random_fsm(rng, n_states, dim=8) -> AccessPatternFsm:
    states = [
        FsmState(rng.normal(size=dim).astype(np.float32), float(rng.uniform(0, 2)))
        for _ in range(n_states)
    ]
    tc = {}
    for _ in range(rng.integers(0, n_states * 2 + 1)):
        i, j = int(rng.integers(n_states)), int(rng.integers(n_states))
        tc[(i, j)] = tc.get((i, j), 0) + 1
    entries = [int(rng.integers(0, 2)) for _ in range(n_states)]
    return AccessPatternFsm(states, tc, entries)


class TestSimilarity:
    def test_on_pattern_chain_scores_t(self):
        # states at exact prefix positions, delta=1, all transitions recorded
        pts = vecs([[0, 0], [10, 0], [20, 0]])
        states = [FsmState(p, 1.0) for p in pts]
        fsm = AccessPatternFsm(states, {(0, 1): 1, (1, 2): 1}, [1, 0, 0])
        assert fsm.similarity(pts, SQ) == pytest.approx(3.0)

    def test_unrecorded_transitions_contribute_zero(self):
        pts = vecs([[0, 0], [10, 0], [20, 0]])
        states = [FsmState(p, 1.0) for p in pts]
        fsm = AccessPatternFsm(states, {}, [1, 0, 0])
        # only the entry term survives
        assert fsm.similarity(pts, SQ) == pytest.approx(1.0)

    def test_empty_fsm_scores_zero(self):
        fsm = AccessPatternFsm([], {}, [])
        assert fsm.similarity(vecs([[1, 1]]), SQ) == 0.0

    def test_matches_independent_reimplementation(self, rng):
        for _ in range(200):
            fsm = random_fsm(rng, int(rng.integers(1, 6)))
            prefix = [rng.normal(size=8).astype(np.float32) for _ in range(int(rng.integers(1, 7)))]
            assert fsm.similarity(prefix, SQ) == pytest.approx(
                sim_reference(fsm, prefix), rel=1e-6, abs=1e-9
            )

    def test_monotone_on_pattern(self):
        pts = vecs([[0, 0], [10, 0], [20, 0]])
        states = [FsmState(p, 1.0) for p in pts]
        fsm = AccessPatternFsm(states, {(0, 1): 1, (1, 2): 1}, [1, 0, 0])
        scores = [fsm.similarity(pts[: t + 1], SQ) for t in range(3)]
        assert scores == sorted(scores)


class TestBuild:
    def test_identical_vectors_collapse(self):
        seq = vecs([[1, 2]] * 5)
        fsm = build_fsm(seq, n_s=8, metric=SQ)
        assert len(fsm.states) == 1
        assert fsm.states[0].delta == 0.0
        assert (0, 0) in fsm.transition_counts  # self-loop kept

    def test_two_groups_forced_apart(self):
        seq = vecs([[0, 0], [0.1, 0], [10, 0], [10.1, 0], [0, 0.1], [10, 0.1]])
        fsm = build_fsm(seq, n_s=2, metric=SQ)
        assert len(fsm.states) == 2
        # group switches recorded as cross transitions
        assert any(i != j for (i, j) in fsm.transition_counts)

    def test_merged_state_stats_match_reference(self, rng):
        seq = [rng.normal(size=4).astype(np.float32) for _ in range(12)]
        fsm = build_fsm(seq, n_s=2, metric=SQ, d_merge=0.0)
        # align each access to its state and recompute stats per state
        groups: dict[int, list[np.ndarray]] = {}
        for v in seq:
            groups.setdefault(fsm.align(v, SQ), []).append(v)
        for idx, members in groups.items():
            ref_c = np.stack(members).mean(axis=0)
            np.testing.assert_allclose(fsm.states[idx].c, ref_c, rtol=1e-4, atol=1e-5)
            ref_d = float(np.mean([np.linalg.norm(m - fsm.states[idx].c) for m in members]))
            assert fsm.states[idx].delta == pytest.approx(ref_d, rel=1e-5, abs=1e-6)

    def test_state_bound_fuzz(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 30))
            seq = [rng.normal(size=6).astype(np.float32) for _ in range(n)]
            n_s = int(rng.integers(1, 10))
            fsm = build_fsm(seq, n_s=n_s, metric=SQ)
            assert len(fsm.states) <= n_s
            for i, j in fsm.transition_counts:
                assert 0 <= i < len(fsm.states) and 0 <= j < len(fsm.states)

    def test_determinism(self, rng):
        seq = [rng.normal(size=6).astype(np.float32) for _ in range(15)]
        a = build_fsm(seq, n_s=4, metric=SQ)
        b = build_fsm(seq, n_s=4, metric=SQ)
        assert len(a.states) == len(b.states)
        assert a.transition_counts == b.transition_counts
        for sa, sb in zip(a.states, b.states):
            np.testing.assert_array_equal(sa.c, sb.c)


class TestMerge:
    def test_self_merge_keeps_state_count(self, rng):
        seq = [rng.normal(size=4).astype(np.float32) for _ in range(8)]
        a = build_fsm(seq, n_s=3, metric=SQ)
        merged = merge_fsms(a, a, n_s=8, metric=SQ)
        assert len(merged.states) == len(a.states)
        # every original transition survives, remapped through nearest states
        remap = {i: merged.align(s.c, SQ) for i, s in enumerate(a.states)}
        for i, j in a.transition_counts:
            assert (remap[i], remap[j]) in merged.transition_counts

    def test_disjoint_singletons_stay_separate(self):
        a = build_fsm(vecs([[0, 0]]), n_s=4, metric=SQ)
        b = build_fsm(vecs([[50, 0]]), n_s=4, metric=SQ)
        merged = merge_fsms(a, b, n_s=4, metric=SQ)
        assert len(merged.states) == 2
        assert not merged.transition_counts  # no spurious transitions

    def test_pair_similarity_symmetric(self, rng):
        a, b = random_fsm(rng, 3), random_fsm(rng, 4)
        assert fsm_pair_similarity(a, b, SQ) == pytest.approx(fsm_pair_similarity(b, a, SQ))


class TestTable:
    def test_empty_table_empty_hint(self):
        table = PatternTable(metric=SQ)
        assert table.match_and_predict(vecs([[1, 1]])).empty

    def test_single_fsm_predicts_successor(self, rng):
        table = PatternTable(n_p=4, n_s=4, metric=SQ, d_merge_factor=0.5)

        def near(x):
            return [x + float(rng.normal(0, 0.3)), float(rng.normal(0, 0.3))]

        for _ in range(3):
            table.observe_completed(vecs([near(0), near(10), near(0), near(10)]))
        hint = table.match_and_predict(vecs([near(0)]))
        assert not hint.empty
        assert hint.predicted_state is not None
        assert float(hint.predicted_state.c[0]) == pytest.approx(10.0, abs=1.5)

    def test_bounded_by_n_p(self, rng):
        table = PatternTable(n_p=4, n_s=4, metric=SQ)
        for i in range(8):
            base = rng.normal(size=4).astype(np.float32) * 100
            seq = [base + rng.normal(size=4).astype(np.float32) for _ in range(5)]
            table.observe_completed(seq)
            assert len(table.fsms) <= 4

    def test_debug_dump_lists_adjacency(self):
        table = PatternTable(n_p=4, n_s=4, metric=SQ)
        table.observe_completed(vecs([[0, 0], [5, 0], [0, 0]]))
        dump = table.debug_dump()
        assert "fsm 0" in dump and "state 0" in dump and "->" in dump
