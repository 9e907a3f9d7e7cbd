import numpy as np
import pytest

from agentmem.core import Metric
from agentmem.graph import (
    HybridGraphIndex,
    portal_probability,
    profile_promote,
    profile_reorder,
)

SQ = Metric.SQUARED_EUCLIDEAN


class Centroids:
    """Minimal centroid provider standing in for the cluster store."""

    def __init__(self):
        self.c: dict[int, np.ndarray] = {}

    def __call__(self, cid: int) -> np.ndarray:
        return self.c[cid]

    def add(self, cid: int, vec):
        self.c[cid] = np.asarray(vec, dtype=np.float32)


def make_index(seed=0, m=8, alpha_ic=6.0):
    cents = Centroids()
    idx = HybridGraphIndex(
        cents, SQ, np.random.default_rng(seed), m=m, ef_search_factor=4, alpha_ic=alpha_ic
    )
    idx.register_scope("static")
    return idx, cents


def populate(idx, cents, scope, vectors, start_cid=0):
    cids = []
    for i, v in enumerate(vectors):
        cid = start_cid + i
        cents.add(cid, v)
        idx.insert(scope, cid)
        cids.append(cid)
    return cids


class TestInsertRemove:
    def test_first_node_becomes_entry(self, rng):
        idx, cents = make_index()
        cents.add(0, rng.normal(size=8))
        idx.insert("static", 0)
        g = idx.graphs["static"]
        assert g.entry == 0
        assert g.nodes[0].neighbors[0] == []

    def test_duplicate_insert_noop(self, rng):
        idx, cents = make_index()
        cents.add(0, rng.normal(size=8))
        idx.insert("static", 0)
        before = idx.debug_dump()
        idx.insert("static", 0)
        assert idx.debug_dump() == before

    def test_degree_bound_under_churn(self, rng):
        idx, cents = make_index(m=6)
        live = []
        next_cid = 0
        for step in range(300):
            if live and rng.random() < 0.3:
                victim = live.pop(int(rng.integers(len(live))))
                idx.remove("static", victim)
            else:
                cents.add(next_cid, rng.normal(size=8))
                idx.insert("static", next_cid)
                live.append(next_cid)
                next_cid += 1
            for node in idx.graphs["static"].nodes.values():
                for layer in node.neighbors:
                    assert len(layer) <= 6

    def test_remove_sole_node(self, rng):
        idx, cents = make_index()
        cents.add(0, rng.normal(size=8))
        idx.insert("static", 0)
        idx.remove("static", 0)
        assert idx.graphs["static"].entry is None
        assert idx.graphs["static"].nodes == {}

    def test_unknown_remove_noop(self):
        idx, _ = make_index()
        idx.remove("static", 42)  # must not raise

    def test_removed_never_emitted(self, rng):
        idx, cents = make_index()
        cids = populate(idx, cents, "static", rng.normal(size=(30, 8)))
        idx.remove("static", cids[7])
        res, _ = idx.search(cents(cids[7]) if cids[7] in cents.c else rng.normal(size=8).astype(np.float32), {"static"}, 30)
        assert cids[7] not in [c for c, _ in res]

    def test_connectivity_after_removals(self, rng):
        idx, cents = make_index(m=8)
        cids = populate(idx, cents, "static", rng.normal(size=(150, 8)))
        live = list(cids)
        for _ in range(100):
            victim = live.pop(int(rng.integers(len(live))))
            idx.remove("static", victim)
        g = idx.graphs["static"]
        # BFS over layer-0 adjacency from the entry point
        seen = {g.entry}
        frontier = [g.entry]
        while frontier:
            nxt = []
            for cid in frontier:
                for nb in g.nodes[cid].neighbors[0]:
                    if nb not in seen:
                        seen.add(nb)
                        nxt.append(nb)
            frontier = nxt
        assert seen == set(g.nodes)


class TestSearch:
    def test_static_recall_at_ef_factor_4(self, rng):
        idx, cents = make_index(seed=3, m=16)
        vs = rng.normal(size=(1000, 16)).astype(np.float32)
        cids = populate(idx, cents, "static", vs)
        mat = np.stack([cents(c) for c in cids])
        hits = 0
        total = 0
        nprobe = 10
        for _ in range(50):
            q = rng.normal(size=16).astype(np.float32)
            res, _ = idx.search(q, {"static"}, nprobe)
            got = {c for c, _ in res}
            d = ((mat - q) ** 2).sum(axis=1)
            true = {cids[i] for i in np.argsort(d)[:nprobe]}
            hits += len(got & true)
            total += nprobe
        assert hits / total >= 0.95

    def test_exhaustive_frontier_equals_bruteforce(self, rng):
        idx, cents = make_index(seed=5)
        vs = rng.normal(size=(80, 8)).astype(np.float32)
        cids = populate(idx, cents, "static", vs)
        agent_vs = rng.normal(size=(40, 8)).astype(np.float32)
        idx.register_scope("a1")
        acids = populate(idx, cents, "a1", agent_vs, start_cid=1000)
        all_cids = cids + acids
        mat = np.stack([cents(c) for c in all_cids])
        for _ in range(20):
            q = rng.normal(size=8).astype(np.float32)
            nprobe = 7
            res, _ = idx.search(q, {"static", "a1"}, nprobe, ef_search=len(all_cids))
            d = ((mat - q) ** 2).sum(axis=1)
            order = np.lexsort((np.array(all_cids), d))[:nprobe]
            expected = [all_cids[i] for i in order]
            assert [c for c, _ in res] == expected

    def test_no_cross_scope_leakage(self, rng):
        idx, cents = make_index(seed=7)
        populate(idx, cents, "static", rng.normal(size=(50, 8)))
        idx.register_scope("a1")
        acids = populate(idx, cents, "a1", rng.normal(size=(20, 8)), start_cid=500)
        for _ in range(10):
            q = rng.normal(size=8).astype(np.float32)
            res, _ = idx.search(q, {"a1"}, 10)
            assert {c for c, _ in res} <= set(acids)

    def test_agent_centroid_query_ranks_first(self, rng):
        idx, cents = make_index(seed=11)
        populate(idx, cents, "static", rng.normal(size=(50, 8)))
        idx.register_scope("a1")
        acids = populate(idx, cents, "a1", rng.normal(size=(20, 8)), start_cid=500)
        q = cents(acids[3])
        res, _ = idx.search(q, {"a1", "static"}, 5)
        assert res[0][0] == acids[3]
        assert res[0][1] == pytest.approx(0.0, abs=1e-6)

    def test_empty_scope_contributes_nothing(self, rng):
        idx, cents = make_index()
        populate(idx, cents, "static", rng.normal(size=(20, 8)))
        idx.register_scope("empty")
        res, _ = idx.search(rng.normal(size=8).astype(np.float32), {"static", "empty"}, 5)
        assert len(res) == 5


class TestPortals:
    def test_probability_formula(self):
        assert portal_probability(6.0, 1.0, 6.0) == pytest.approx(1 / 36)
        assert portal_probability(1.0, 1.0, 4.0) == pytest.approx(0.25)
        # boundary: ratio at or below 1 gives p = 1
        assert portal_probability(0.5, 1.0, 1.0) == 1.0
        assert portal_probability(0.0, 1.0, 8.0) == 1.0

    def test_dense_regime_every_insert_portals(self, rng):
        idx, cents = make_index(seed=2, alpha_ic=1.0)
        populate(idx, cents, "static", rng.normal(size=(30, 8)))
        idx.register_scope("a1")
        idx.spacing_override = {"static": 0.5, "a1": 1.0}  # p = 1
        made = 0
        for i in range(50):
            cents.add(1000 + i, rng.normal(size=8))
            made += bool(idx.insert("a1", 1000 + i))
        assert made == 50

    @pytest.mark.parametrize(
        "d_static,d_agent,alpha,seed",
        [(6.0, 1.0, 6.0, 3), (2.0, 1.0, 4.0, 8), (0.5, 1.0, 1.0, 3)],
    )
    def test_monte_carlo_rate(self, d_static, d_agent, alpha, seed, rng):
        idx, cents = make_index(seed=seed, alpha_ic=alpha)
        populate(idx, cents, "static", rng.normal(size=(100, 8)))
        idx.register_scope("a1")
        idx.spacing_override = {"static": d_static, "a1": d_agent}
        made = 0
        for i in range(1000):
            cents.add(5000 + i, rng.normal(size=8))
            made += bool(idx.insert("a1", 5000 + i))
        expected = portal_probability(d_static, d_agent, alpha)
        assert abs(made / 1000 - expected) <= 0.2 * expected


class TestProfiles:
    def test_empty_profile_identity(self):
        assert profile_reorder([], [0, 1, 2, 3]) == [0, 1, 2, 3]

    def test_stated_example(self):
        assert profile_reorder([7, 3], list(range(10))) == [7, 3, 0, 1, 2, 4, 5, 6, 8, 9]

    def test_always_permutation(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 20))
            order = list(range(n))
            entries = [int(rng.integers(0, n + 5)) for _ in range(int(rng.integers(0, 8)))]
            out = profile_reorder(entries, order)
            assert sorted(out) == order

    def test_promote_into_empty(self):
        assert profile_promote([], [4, 2], 8) == [4, 2]

    def test_promote_existing_moves_to_front(self):
        assert profile_promote([1, 2, 3], [3], 8) == [3, 1, 2]

    def test_truncation(self):
        prof = []
        for i in range(13):  # P_size + 5 distinct promotions at P_size=8
            prof = profile_promote(prof, [i], 8)
        assert len(prof) == 8
        assert prof == [12, 11, 10, 9, 8, 7, 6, 5]
