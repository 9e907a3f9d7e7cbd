import numpy as np
import pytest

from agentmem import ScopePermissionError, Store, StoreConfig, UsageError
from agentmem.bench.oracle import StreamingOracle


def make_store(**kw):
    defaults = dict(dimension=8, seed=7, split_threshold=64, split_target=32)
    defaults.update(kw)
    return Store(StoreConfig(**defaults))


def exhaustive(store, agent, scopes, q, k):
    return store.search(agent, scopes, q, k, nprobe=max(len(store.clusters.clusters), 1))


class TestLifecycle:
    def test_create_then_search_empty(self, rng):
        store = make_store()
        res = store.search(None, ["static"], rng.normal(size=8).astype(np.float32), 5)
        assert res.hits == []

    def test_dimension_1024_accepted(self, rng):
        store = make_store(dimension=1024)
        v = rng.normal(size=1024).astype(np.float32)
        ids = store.insert(None, "static", [v])
        res = store.search(None, ["static"], v, 1)
        assert res.hits[0][0] == ids[0]

    def test_invalid_dimension_rejected(self):
        with pytest.raises(UsageError):
            StoreConfig(dimension=0)

    def test_register_twenty_agents_all_searchable(self, rng):
        store = make_store()
        for i in range(20):
            a = store.register_agent(f"agent{i}")
            ids = store.insert(a, a, [rng.normal(size=8).astype(np.float32)])
            res = store.search(a, [a], store._vector_of(ids[0]), 1)
            assert res.hits[0][0] == ids[0]
        assert len(store.registered_scopes()) == 21

    def test_duplicate_agent_rejected(self):
        store = make_store()
        store.register_agent("a1")
        with pytest.raises(UsageError):
            store.register_agent("a1")
        with pytest.raises(UsageError):
            store.register_agent("static")

    def test_unregister_unknown_errors(self):
        store = make_store()
        with pytest.raises(UsageError):
            store.unregister_agent("ghost")

    def test_determinism_same_seed_same_stats(self, rng):
        def run(seed):
            store = make_store(seed=seed)
            a = store.register_agent("a1")
            r = np.random.default_rng(3)
            out = []
            for i in range(30):
                v = r.normal(size=8).astype(np.float32)
                if i % 2 == 0:
                    store.insert(a, a, [v])
                else:
                    res = store.search(a, [a, "static"], v, 3)
                    out.append((res.hits, vars(res.stats).copy()))
            return out

        assert run(11) == run(11)


class TestInsertSearch:
    def test_insert_then_search_distance_zero(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        v = rng.normal(size=8).astype(np.float32)
        iid = store.insert(a, a, [v], [b"payload"])[0]
        res = store.search(a, [a], v, 1)
        assert res.hits[0][0] == iid
        assert res.hits[0][1] == pytest.approx(0.0, abs=1e-6)

    def test_batch_insert_distinct_ids(self, rng):
        store = make_store()
        ids = store.insert(None, "static", rng.normal(size=(50, 8)).astype(np.float32))
        assert len(ids) == 50 and len(set(ids)) == 50

    def test_read_your_writes_cross_agent(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        b = store.register_agent("b1")
        v = rng.normal(size=8).astype(np.float32)
        iid = store.insert(a, a, [v])[0]
        res = store.search(b, [a, b], v, 1)  # staged item visible to others
        assert res.hits[0][0] == iid

    def test_foreign_scope_write_rejected(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        store.register_agent("b1")
        v = rng.normal(size=8).astype(np.float32)
        with pytest.raises(ScopePermissionError):
            store.insert(a, "b1", [v])
        with pytest.raises(ScopePermissionError):
            store.insert(a, "static", [v])

    def test_static_writable_when_configured(self, rng):
        store = make_store(static_writable_by_agents=True)
        a = store.register_agent("a1")
        ids = store.insert(a, "static", [rng.normal(size=8).astype(np.float32)])
        assert len(ids) == 1

    def test_k_exceeding_live_returns_all(self, rng):
        store = make_store()
        store.insert(None, "static", rng.normal(size=(7, 8)).astype(np.float32))
        res = store.search(None, ["static"], rng.normal(size=8).astype(np.float32), 50)
        assert len(res.hits) == 7

    def test_unknown_scope_errors(self, rng):
        store = make_store()
        with pytest.raises(UsageError):
            store.search(None, ["nope"], rng.normal(size=8).astype(np.float32), 1)


class TestUpdateDelete:
    def test_update_same_vector_still_found(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        v = rng.normal(size=8).astype(np.float32)
        iid = store.insert(a, a, [v], [b"x"])[0]
        assert store.update(a, iid, vector=v, payload=b"y")
        res = store.search(a, [a], v, 1)
        assert res.hits[0][0] == iid and res.hits[0][1] == pytest.approx(0.0, abs=1e-6)
        assert store.get_item(iid)[1] == b"y"

    def test_update_moves_item(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        near = rng.normal(size=8).astype(np.float32)
        far = near + 100.0
        iid = store.insert(a, a, [near])[0]
        store.insert(a, a, [near + 0.01])
        assert store.update(a, iid, vector=far)
        res = store.search(a, [a], near, 1)
        assert res.hits[0][0] != iid

    def test_update_unknown_false(self):
        store = make_store()
        assert store.update(None, 999, vector=None) is False

    def test_random_updates_match_replay_oracle(self, rng):
        store = make_store()
        oracle = StreamingOracle(8)
        ids = store.insert(None, "static", rng.normal(size=(100, 8)).astype(np.float32))
        for iid in ids:
            oracle.insert(iid, store._vector_of(iid), "static")
        for _ in range(300):
            op = rng.random()
            if op < 0.5:
                victim = int(rng.choice(ids))
                v = rng.normal(size=8).astype(np.float32)
                if store.update(None, victim, vector=v):
                    oracle.update(victim, v, "static")
            elif op < 0.6:
                victim = int(rng.choice(ids))
                if store.delete(None, victim):
                    oracle.delete(victim)
            else:
                q = rng.normal(size=8).astype(np.float32)
                res = exhaustive(store, None, ["static"], q, 5)
                want = oracle.topk(q, 5, ["static"])
                assert [(h[0], round(h[1], 4)) for h in res.hits] == [
                    (w[0], round(w[1], 4)) for w in want
                ]

    def test_delete_semantics(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        v = rng.normal(size=8).astype(np.float32)
        iid = store.insert(a, a, [v])[0]
        assert store.delete(a, iid) is True
        assert store.delete(a, iid) is False
        res = store.search(a, [a], v, 1)
        assert all(h[0] != iid for h in res.hits)


class TestPipeline:
    def test_exhaustive_matches_bruteforce(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        oracle = StreamingOracle(8)
        for i in range(300):
            v = rng.normal(size=8).astype(np.float32)
            scope = a if i % 3 == 0 else "static"
            iid = store.insert(a if scope == a else None, scope, [v])[0]
            oracle.insert(iid, v, scope)
        for _ in range(50):
            q = rng.normal(size=8).astype(np.float32)
            res = exhaustive(store, None, [a, "static"], q, 10)
            want = oracle.topk(q, 10, [a, "static"])
            assert [h[0] for h in res.hits] == [w[0] for w in want]

    def test_completeness_under_cache_flush(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        ids = []
        for _ in range(40):
            v = rng.normal(size=8).astype(np.float32)
            ids.extend(store.insert(a, a, [v]))
        store.flush_caches()
        assert store.clusters.staged[a] == {}  # nothing cache-owned anymore
        for iid in ids:
            v = store._vector_of(iid)
            assert v is not None
            saved = store.cfg.cache_enabled
            store.cfg.cache_enabled = False
            res = exhaustive(store, None, [a], v, 1)
            store.cfg.cache_enabled = saved
            assert res.hits[0][0] == iid

    def test_streaming_one_to_one_recall(self, rng):
        store = make_store(split_threshold=256, split_target=128)
        a = store.register_agent("a1")
        oracle = StreamingOracle(8)
        base = rng.normal(size=(500, 8)).astype(np.float32)
        ids = store.bulk_build("static", base)
        for iid in ids:
            oracle.insert(iid, store._vector_of(iid), "static")
        center = rng.normal(size=8).astype(np.float32)
        recalls = []
        for i in range(100):
            v = (center + rng.normal(0, 0.3, 8)).astype(np.float32)
            iid = store.insert(a, a, [v])[0]
            oracle.insert(iid, v, a)
            q = (center + rng.normal(0, 0.3, 8)).astype(np.float32)
            res = store.search(a, [a, "static"], q, 5)
            want = {w[0] for w in oracle.topk(q, 5, [a, "static"])}
            recalls.append(len(set(res.ids) & want) / max(len(want), 1))
        assert float(np.mean(recalls[20:])) >= 0.9

    def test_scope_filtering_in_results(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        store.insert(a, a, [rng.normal(size=8).astype(np.float32)])
        store.insert(None, "static", rng.normal(size=(20, 8)).astype(np.float32))
        res = exhaustive(store, a, [a], rng.normal(size=8).astype(np.float32), 10)
        assert all(h[2] == a for h in res.hits)

    def test_verify_mode_counts_misses_exactly(self, rng):
        store = make_store(verify_mode=True, split_threshold=256, split_target=128)
        a = store.register_agent("a1")
        oracle = StreamingOracle(8)
        ids = store.bulk_build("static", rng.normal(size=(300, 8)).astype(np.float32))
        for iid in ids:
            oracle.insert(iid, store._vector_of(iid), "static")
        center = rng.normal(size=8).astype(np.float32)
        expected_misses = 0
        early_count = 0
        for i in range(120):
            q = (center + rng.normal(0, 0.2, 8)).astype(np.float32)
            res = store.search(a, [a, "static"], q, 5)
            if res.stats.early_terminated:
                early_count += 1
                want = [w[0] for w in oracle.topk(q, 5, [a, "static"])]
                if res.ids != want:
                    expected_misses += 1
        cache = store.caches[a]
        assert cache.verified_count == early_count
        assert cache.miss_count == expected_misses


class TestAsync:
    def test_submit_returns_future(self, rng):
        store = make_store()
        a = store.register_agent("a1")
        fut = store.submit_insert(a, a, [rng.normal(size=8).astype(np.float32)])
        ids = fut.result()
        res = store.submit_search(a, [a], store._vector_of(ids[0]), 1).result()
        assert res.hits[0][0] == ids[0]

    def test_batch_kind_enforced(self):
        from agentmem.engine import OperationBatch

        with pytest.raises(UsageError):
            OperationBatch("mixed", "a1", [])

    def test_threaded_mode_smoke(self, rng):
        store = make_store(threads=4)
        try:
            agents = [store.register_agent(f"t{i}") for i in range(4)]
            futures = []
            for i in range(40):
                a = agents[i % 4]
                v = rng.normal(size=8).astype(np.float32)
                futures.append(store.submit_insert(a, a, [v]))
            ids = [f.result()[0] for f in futures]
            assert len(set(ids)) == 40
            for a in agents:
                res = store.submit_search(a, [a], rng.normal(size=8).astype(np.float32), 5).result()
                assert len(res.hits) <= 5
        finally:
            store.close()

    def test_submit_batch_homogeneous(self, rng):
        from agentmem.engine import OperationBatch

        store = make_store()
        a = store.register_agent("a1")
        vecs = rng.normal(size=(5, 8)).astype(np.float32)
        batch = OperationBatch("insert", a, [(a, [v]) for v in vecs])
        out = store.submit_batch(batch).result()
        assert sum(len(ids) for ids in out) == 5


class TestConcurrentTraffic:
    def test_concurrent_agents_keep_invariants(self):
        """Four agents mutate and search concurrently; the store stays
        consistent and a quiescent exhaustive search matches brute force."""
        import threading

        store = make_store(threads=4, split_threshold=64, split_target=32)
        agents = [store.register_agent(f"c{i}") for i in range(4)]
        errors = []

        def worker(agent, seed):
            r = np.random.default_rng(seed)
            try:
                mine = []
                for i in range(60):
                    roll = r.random()
                    if roll < 0.5 or not mine:
                        mine.extend(store.insert(agent, agent, [r.normal(size=8).astype(np.float32)]))
                    elif roll < 0.6:
                        store.delete(agent, mine.pop(int(r.integers(len(mine)))))
                    elif roll < 0.7 and mine:
                        store.update(agent, mine[int(r.integers(len(mine)))],
                                     vector=r.normal(size=8).astype(np.float32))
                    else:
                        store.search(agent, [agent, "static"], r.normal(size=8).astype(np.float32), 3)
                    if i % 20 == 0:
                        store.end_request(agent)
            except Exception as exc:  # noqa: BLE001 - surfaced below
                errors.append((agent, exc))

        threads = [threading.Thread(target=worker, args=(a, 100 + i)) for i, a in enumerate(agents)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        try:
            assert errors == [], errors
            # partition invariant: every live item owned exactly once
            seen = set()
            for cid, cl in store.clusters.clusters.items():
                for iid in cl.member_ids.tolist():
                    assert iid not in seen
                    seen.add(iid)
            for scope, staged in store.clusters.staged.items():
                for iid in staged:
                    assert iid not in seen
                    seen.add(iid)
            assert seen == set(store.clusters.owner)
            # quiescent exhaustive search equals brute force
            oracle = StreamingOracle(8)
            for iid in store.clusters.owner:
                vec, _, scope = store.get_item(iid)
                oracle.insert(iid, vec, scope)
            r = np.random.default_rng(5)
            for _ in range(10):
                q = r.normal(size=8).astype(np.float32)
                res = exhaustive(store, None, agents + ["static"], q, 5)
                want = oracle.topk(q, 5, agents + ["static"])
                assert [h[0] for h in res.hits] == [w[0] for w in want]
        finally:
            store.close()
