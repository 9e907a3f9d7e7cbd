import os
import struct

import numpy as np
import pytest

from agentmem import ParseError, Store, StoreConfig, UsageError, VersionMismatchError
from agentmem.persist import read_fvecs, write_fvecs


def build_store(seed=7, with_ops=True):
    store = Store(StoreConfig(dimension=8, seed=seed, split_threshold=64, split_target=32))
    if not with_ops:
        return store
    a = store.register_agent("a1")
    rng = np.random.default_rng(0)
    store.insert(None, "static", rng.normal(size=(120, 8)).astype(np.float32))
    for i in range(25):
        v = rng.normal(size=8).astype(np.float32)
        store.insert(a, a, [v], [f"p{i}".encode()])
        store.search(a, [a, "static"], v, k=3)
    store.end_request(a)
    return store


def probe_results(store, scopes, n=100, k=5):
    rng = np.random.default_rng(42)
    out = []
    for _ in range(n):
        q = rng.normal(size=8).astype(np.float32)
        res = store.search(None, scopes, q, k, nprobe=max(len(store.clusters.clusters), 1))
        out.append([(h[0], h[1]) for h in res.hits])
    return out


class TestSnapshot:
    def test_round_trip_search_equivalence(self, tmp_path):
        store = build_store()
        path = tmp_path / "s.pnck"
        store.snapshot(path)
        restored = Store.restore(path)
        assert probe_results(store, ["a1", "static"]) == probe_results(
            restored, ["a1", "static"]
        )

    def test_bit_exact_across_runs(self, tmp_path):
        pa, pb = tmp_path / "a.pnck", tmp_path / "b.pnck"
        build_store(seed=7).snapshot(pa)
        build_store(seed=7).snapshot(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_empty_store_restorable(self, tmp_path):
        store = build_store(with_ops=False)
        path = tmp_path / "empty.pnck"
        store.snapshot(path)
        restored = Store.restore(path)
        assert restored.live_count() == 0
        assert restored.registered_scopes() == ["static"]

    def test_version_mismatch_refused(self, tmp_path):
        store = build_store(with_ops=False)
        path = tmp_path / "v.pnck"
        store.snapshot(path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99  # bump the version field
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            Store.restore(path)

    def test_payloads_and_counters_survive(self, tmp_path):
        store = build_store()
        path = tmp_path / "c.pnck"
        store.snapshot(path)
        restored = Store.restore(path)
        for iid in list(store.clusters.owner)[:10]:
            assert restored.get_item(iid)[1] == store.get_item(iid)[1]
        assert restored._next_item_id == store._next_item_id
        assert restored.caches["a1"].d_agent == store.caches["a1"].d_agent


class TestExchange:
    def test_export_import_equivalence(self, tmp_path):
        store = build_store()
        store.flush_caches()  # exchange format carries clusters only
        path = tmp_path / "x.pnck"
        store.export_ivf(path, scopes=["static"])
        other = Store(StoreConfig(dimension=8, seed=1))
        count = other.load_external_ivf(path, "static")
        assert count == len(store.clusters.by_scope["static"])
        assert probe_results(store, ["static"]) == probe_results(other, ["static"])

    def test_single_cluster_file(self, tmp_path):
        store = build_store(with_ops=False)
        v = np.arange(8, dtype=np.float32)
        store.insert(None, "static", [v])
        path = tmp_path / "one.pnck"
        store.export_ivf(path)
        other = Store(StoreConfig(dimension=8, seed=2))
        assert other.load_external_ivf(path, "static") == 1
        res = other.search(None, ["static"], v, 1)
        assert res.hits[0][1] == pytest.approx(0.0)

    def test_empty_cluster_list(self, tmp_path):
        store = build_store(with_ops=False)
        path = tmp_path / "none.pnck"
        store.export_ivf(path)
        other = Store(StoreConfig(dimension=8, seed=2))
        assert other.load_external_ivf(path, "static") == 0

    def test_dimension_mismatch_rejected(self, tmp_path):
        store = build_store(with_ops=False)
        path = tmp_path / "d.pnck"
        store.export_ivf(path)
        other = Store(StoreConfig(dimension=16, seed=2))
        with pytest.raises(UsageError):
            other.load_external_ivf(path, "static")

    def test_malformed_file_reports_offset(self, tmp_path):
        path = tmp_path / "bad.pnck"
        path.write_bytes(b"PNCK" + struct.pack("<IIB", 1, 8, 0) + b"\x05\x00")
        store = build_store(with_ops=False)
        with pytest.raises(ParseError) as err:
            store.load_external_ivf(path, "static")
        assert err.value.offset > 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pnck"
        path.write_bytes(b"JUNKxxxxxxxxxxxxx")
        store = build_store(with_ops=False)
        with pytest.raises(ParseError):
            store.load_external_ivf(path, "static")


class TestVectorFiles:
    def test_fvecs_round_trip(self, tmp_path, rng):
        vs = [rng.normal(size=8).astype(np.float32) for _ in range(20)]
        path = tmp_path / "v.fvecs"
        write_fvecs(path, vs)
        back = read_fvecs(path)
        assert len(back) == 20
        for a, b in zip(vs, back):
            np.testing.assert_array_equal(a, b)

    def test_fvecs_ingest(self, tmp_path, rng):
        vs = [rng.normal(size=8).astype(np.float32) for _ in range(10)]
        path = tmp_path / "v.fvecs"
        write_fvecs(path, vs)
        store = build_store(with_ops=False)
        ids = store.ingest_fvecs(path, "static")
        assert len(ids) == 10
        res = store.search(None, ["static"], vs[3], 1)
        assert res.hits[0][1] == pytest.approx(0.0)

    def test_fvecs_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.fvecs"
        path.write_bytes(struct.pack("<i", 8) + b"\x00" * 12)
        with pytest.raises(ParseError):
            read_fvecs(path)

    def test_jsonl_ingest(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text(
            '{"id": 5, "vector": [1,0,0,0,0,0,0,0], "payload": "hello", "scope": "static"}\n'
            '{"vector": [0,1,0,0,0,0,0,0], "scope": "static"}\n'
        )
        store = build_store(with_ops=False)
        assert store.ingest_jsonl(path) == 2
        vec, payload, scope = store.get_item(5)
        assert payload == b"hello" and scope == "static"

    def test_jsonl_bad_record(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"scope": "static"}\n')
        store = build_store(with_ops=False)
        with pytest.raises(ParseError):
            store.ingest_jsonl(path)


class TestSeedOverride:
    def test_env_seed_wins(self, monkeypatch):
        monkeypatch.setenv("PANCAKE_SEED", "12345")
        store = Store(StoreConfig(dimension=8, seed=7))
        assert store.seed == 12345
        monkeypatch.delenv("PANCAKE_SEED")
        store2 = Store(StoreConfig(dimension=8, seed=7))
        assert store2.seed == 7
