"""Binary exchange format, snapshots, and ingestion readers.

Layout (little-endian): header {magic "PNCK", version u32, dimension u32,
metric u8}, then u32 cluster count and cluster records {centroid f32[d],
count u32, (item-id u64, vector f32[d]) x count}, then tagged sections
{tag 4 bytes, length u64, payload}. Cluster identity, scopes, graphs,
profiles, FSM tables, caches, and counters ride in the tagged sections;
importers that only want the clusters skip unknown tags. Vectors that must
round-trip bit-exactly are raw f32 bytes (base64 inside JSON sections).
"""

from __future__ import annotations

import base64
import json
import struct
from io import BufferedReader

import numpy as np

from .cache import L0Entry, L1Cluster
from .clusters import Cluster
from .core import Metric, ParseError, UsageError, VersionMismatchError
from .fsm import AccessPatternFsm, FsmState
from .graph import _Node
from .pool import VectorPool

MAGIC = b"PNCK"
VERSION = 1


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.float32).tobytes()).decode()


def _unb64(s: str, dimension: int) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype=np.float32).reshape(-1, dimension)[0].copy()


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class _Reader:
    def __init__(self, f: BufferedReader):
        self.f = f
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        data = self.f.read(n)
        if len(data) != n:
            raise ParseError(f"truncated file while reading {what}", self.offset)
        self.offset += n
        return data

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.read(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.read(8, what))[0]

    def u8(self, what: str) -> int:
        return self.read(1, what)[0]


def _write_header(f, dimension: int, metric: Metric):
    f.write(MAGIC)
    f.write(struct.pack("<IIB", VERSION, dimension, metric.wire_code))


def _read_header(r: _Reader) -> tuple[int, Metric]:
    magic = r.read(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(
            f"format version {version} not supported (expected {VERSION})"
        )
    dimension = r.u32("dimension")
    metric = Metric.from_wire(r.u8("metric"))
    return dimension, metric


def _write_cluster_records(f, store, cids: list[int]):
    f.write(struct.pack("<I", len(cids)))
    for cid in cids:
        cl = store.clusters.clusters[cid]
        f.write(np.ascontiguousarray(cl.centroid, dtype=np.float32).tobytes())
        f.write(struct.pack("<I", cl.size))
        for row in range(cl.size):
            f.write(struct.pack("<Q", int(cl.member_ids[row])))
            f.write(np.ascontiguousarray(cl.vectors[row], dtype=np.float32).tobytes())


def _read_cluster_records(r: _Reader, dimension: int):
    n_clusters = r.u32("cluster count")
    out = []
    vec_bytes = dimension * 4
    for ci in range(n_clusters):
        cent = np.frombuffer(r.read(vec_bytes, f"cluster {ci} centroid"), dtype=np.float32).copy()
        count = r.u32(f"cluster {ci} member count")
        ids = np.empty(count, dtype=np.int64)
        mat = np.empty((count, dimension), dtype=np.float32)
        for i in range(count):
            ids[i] = struct.unpack("<Q", r.read(8, f"cluster {ci} item id"))[0]
            mat[i] = np.frombuffer(r.read(vec_bytes, f"cluster {ci} vector"), dtype=np.float32)
        out.append((cent, ids, mat))
    return out


def _write_section(f, tag: bytes, payload: bytes):
    assert len(tag) == 4
    f.write(tag)
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)


def _read_sections(r: _Reader) -> dict[bytes, bytes]:
    sections = {}
    while True:
        tag = r.f.read(4)
        if not tag:
            break
        if len(tag) != 4:
            raise ParseError("truncated section tag", r.offset)
        r.offset += 4
        length = r.u64("section length")
        sections[tag] = r.read(length, f"section {tag!r}")
    return sections


# --- snapshot / restore ---


def snapshot(store, path):
    cids = sorted(store.clusters.clusters)
    with open(path, "wb") as f:
        _write_header(f, store.cfg.dimension, store.metric)
        _write_cluster_records(f, store, cids)

        cmeta = {
            "clusters": [
                {
                    "id": cid,
                    "scope": store.clusters.clusters[cid].scope,
                    "delta": store.clusters.clusters[cid].delta,
                    "centroid": _b64(store.clusters.clusters[cid].centroid),
                    "access_count": store.clusters.clusters[cid].access_count,
                    "dirty": store.clusters.clusters[cid].dirty,
                }
                for cid in cids
            ],
            "next_cid": store.clusters._next_cid,
        }
        _write_section(f, b"CMET", _json_bytes(cmeta))

        stag = {
            scope: [[iid, _b64(vec)] for iid, vec in items.items()]
            for scope, items in store.clusters.staged.items()
        }
        _write_section(f, b"STAG", _json_bytes(stag))

        payl = [[iid, base64.b64encode(p).decode()] for iid, p in sorted(store.payloads.items())]
        _write_section(f, b"PAYL", _json_bytes(payl))

        grph = {
            "scopes": {
                scope: {
                    "entry": g.entry,
                    "max_level": g.max_level,
                    "spacing_sum": g._spacing_sum,
                    "spacing_n": g._spacing_n,
                    "nodes": {
                        str(cid): {"level": n.level, "neighbors": n.neighbors}
                        for cid, n in g.nodes.items()
                    },
                }
                for scope, g in store.graph.graphs.items()
            },
            "portal_pairs": sorted(store.graph.portal_pairs),
        }
        _write_section(f, b"GRPH", _json_bytes(grph))

        prof = [
            [cid, agent, entries]
            for cid in cids
            for agent, entries in store.clusters.clusters[cid].profiles.items()
        ]
        _write_section(f, b"PROF", _json_bytes(prof))

        fsmt = {
            agent: [
                {
                    "states": [
                        {"c": _b64(s.c), "delta": s.delta, "hits": s.hits, "count": s.count}
                        for s in fsm.states
                    ],
                    "transitions": [[i, j, n] for (i, j), n in sorted(fsm.transition_counts.items())],
                    "entries": fsm.entry_counts,
                    "d_merge": fsm.d_merge,
                }
                for fsm in table.fsms
            ]
            for agent, table in store.patterns.items()
        }
        _write_section(f, b"FSMT", _json_bytes(fsmt))

        cach = {}
        for agent, cache in store.caches.items():
            l0 = []
            for key, entry in cache.l0.items():
                l0.append(
                    {
                        "key": list(key) if isinstance(key, tuple) else key,
                        "freq": entry.freq,
                        "last_access": entry.last_access,
                        "items": [[iid, bool(st)] for iid, _, _, st in entry.pool.rows()],
                    }
                )
            l1 = [[[iid, bool(st)] for iid, _, _, st in cl.pool.rows()] for cl in cache.l1]
            cach[agent] = {
                "l0": l0,
                "l1": l1,
                "window": list(cache._window),
                "seq": cache._seq,
                "completed": cache.completed_queries,
                "verified": cache.verified_count,
                "miss": cache.miss_count,
            }
        _write_section(f, b"CACH", _json_bytes(cach))

        seqs = {agent: [_b64(v) for v in seq] for agent, seq in store.sequences.items()}
        _write_section(f, b"SEQS", _json_bytes(seqs))

        tier = {
            "clock": store.tier.clock,
            "freq": [[cid, v, last] for cid, (v, last) in sorted(store.tier.freq.items())],
            "flush_count": store.tier.flush_count,
        }
        _write_section(f, b"TIER", _json_bytes(tier))

        rng_state = store.rng.bit_generator.state
        meta = {
            "seed": store.seed,
            "next_item_id": store._next_item_id,
            "op_count": store._op_count,
            "agents": list(store.caches),
            "rng_state": rng_state,
        }
        _write_section(f, b"META", _json_bytes(meta))

        conf = {k: (v.value if isinstance(v, Metric) else v) for k, v in vars(store.cfg).items()}
        _write_section(f, b"CONF", _json_bytes(conf))


def restore(store_cls, path):
    with open(path, "rb") as f:
        r = _Reader(f)
        dimension, metric = _read_header(r)
        records = _read_cluster_records(r, dimension)
        sections = _read_sections(r)

    def sec(tag: bytes):
        if tag not in sections:
            raise ParseError(f"missing section {tag!r}", 0)
        return json.loads(sections[tag].decode())

    conf = sec(b"CONF")
    from .engine import StoreConfig  # local import avoids a cycle

    cfg = StoreConfig(**conf)
    store = store_cls(cfg)
    meta = sec(b"META")
    cmeta = sec(b"CMET")

    for agent in meta["agents"]:
        store.register_agent(agent)

    # clusters rebuilt with preserved identity; graph is restored, not rebuilt
    store.clusters.on_cluster_created = None
    store.clusters.on_cluster_retired = None
    for rec, info in zip(records, cmeta["clusters"]):
        cent, ids, mat = rec
        cl = Cluster(info["id"], info["scope"], dimension)
        for i in range(len(ids)):
            cl.add(int(ids[i]), mat[i])
            store.clusters.owner[int(ids[i])] = ("cluster", info["id"])
        cl.centroid = _unb64(info["centroid"], dimension)
        cl.delta = info["delta"]
        cl.access_count = info["access_count"]
        cl.dirty = info["dirty"]
        store.clusters.clusters[info["id"]] = cl
        store.clusters.by_scope.setdefault(info["scope"], {})[info["id"]] = None
    store.clusters._next_cid = cmeta["next_cid"]
    store.clusters.on_cluster_created = lambda cl: store.graph.insert(cl.scope, cl.id)
    store.clusters.on_cluster_retired = lambda cl: store.graph.remove(cl.scope, cl.id)

    for scope, items in sec(b"STAG").items():
        store.clusters.register_scope(scope)
        for iid, b in items:
            store.clusters.staged[scope][iid] = _unb64(b, dimension)
            store.clusters.owner[iid] = ("staged", scope)

    for iid, b in sec(b"PAYL"):
        store.payloads[iid] = base64.b64decode(b)

    grph = sec(b"GRPH")
    for scope, g in grph["scopes"].items():
        store.graph.register_scope(scope)
        graph = store.graph.graphs[scope]
        graph.entry = g["entry"]
        graph.max_level = g["max_level"]
        graph._spacing_sum = g["spacing_sum"]
        graph._spacing_n = g["spacing_n"]
        for cid_s, nd in g["nodes"].items():
            cid = int(cid_s)
            node = _Node(cid, nd["level"])
            node.neighbors = [list(layer) for layer in nd["neighbors"]]
            graph.nodes[cid] = node
            store.graph.scope_of[cid] = scope
    for a, b in grph["portal_pairs"]:
        store.graph.portal_pairs.add((a, b))
        store.graph.portals.setdefault(a, []).append(b)
        store.graph.portals.setdefault(b, []).append(a)

    for cid, agent, entries in sec(b"PROF"):
        store.clusters.clusters[cid].profiles[agent] = list(entries)

    for agent, fsms in sec(b"FSMT").items():
        table = store.patterns[agent]
        for fd in fsms:
            states = [
                FsmState(_unb64(s["c"], dimension), s["delta"], s["hits"], s["count"])
                for s in fd["states"]
            ]
            tc = {(i, j): n for i, j, n in fd["transitions"]}
            table.fsms.append(AccessPatternFsm(states, tc, list(fd["entries"]), fd["d_merge"]))

    for agent, cd in sec(b"CACH").items():
        cache = store.caches[agent]
        for ed in cd["l0"]:
            key = tuple(ed["key"]) if isinstance(ed["key"], list) else ed["key"]
            entry = L0Entry(key, VectorPool(dimension, ordered=True), ed["freq"], ed["last_access"])
            for iid, staged in ed["items"]:
                info = store.get_item(iid)
                if info is None:
                    continue
                vec, _, scope = info
                entry.pool.add(iid, vec, store.scope_codes.intern(scope), staged)
            cache.l0[key] = entry
        for items in cd["l1"]:
            cl = L1Cluster(dimension)
            for iid, staged in items:
                info = store.get_item(iid)
                if info is None:
                    continue
                vec, _, scope = info
                cl.add(iid, vec, store.scope_codes.intern(scope), staged)
            cache.l1.append(cl)
        cache._window.extend(cd["window"])
        cache._seq = cd["seq"]
        cache.completed_queries = cd["completed"]
        cache.verified_count = cd["verified"]
        cache.miss_count = cd["miss"]

    for agent, seq in sec(b"SEQS").items():
        store.sequences[agent] = [_unb64(b, dimension) for b in seq]

    tier = sec(b"TIER")
    store.tier.clock = tier["clock"]
    store.tier.freq = {cid: (v, last) for cid, v, last in tier["freq"]}
    store.tier.flush_count = tier["flush_count"]

    store._next_item_id = meta["next_item_id"]
    store._op_count = meta["op_count"]
    store.rng.bit_generator.state = meta["rng_state"]
    if store.cfg.accelerator != "none":
        store.tier.hotset_update()
    return store


# --- exchange: export / import cluster records ---


def export_clusters(store, path, scopes=None):
    if scopes is None:
        scopes = list(store.clusters.by_scope)
    cids = sorted(
        cid for cid in store.clusters.clusters if store.clusters.clusters[cid].scope in scopes
    )
    with open(path, "wb") as f:
        _write_header(f, store.cfg.dimension, store.metric)
        _write_cluster_records(f, store, cids)


def load_external_ivf(store, path, scope: str) -> int:
    if scope not in store.clusters.by_scope:
        raise UsageError(f"unknown scope {scope!r}")
    with open(path, "rb") as f:
        r = _Reader(f)
        dimension, metric = _read_header(r)
        if dimension != store.cfg.dimension:
            raise UsageError(
                f"dimension mismatch: file has {dimension}, store has {store.cfg.dimension}"
            )
        if metric is not store.metric:
            raise UsageError(f"metric mismatch: file has {metric}, store has {store.metric}")
        records = _read_cluster_records(r, dimension)
        _read_sections(r)  # exchange consumers skip auxiliary sections

    for _, ids, _ in records:
        for iid in ids.tolist():
            if iid in store.clusters.owner:
                raise UsageError(f"item id {iid} already live in store")
    count = 0
    for _, ids, mat in records:
        if len(ids) == 0:
            continue
        seed = [(int(ids[i]), mat[i]) for i in range(len(ids))]
        store.clusters.create_cluster(scope, seed)
        store._next_item_id = max(store._next_item_id, int(ids.max()) + 1)
        count += 1
    return count


# --- vector file readers ---


def read_fvecs(path, dimension: int | None = None, limit: int | None = None) -> list[np.ndarray]:
    """fvecs: little-endian records of (d: i32, then d f32), repeated."""
    out = []
    with open(path, "rb") as f:
        offset = 0
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ParseError("truncated fvecs record header", offset)
            d = struct.unpack("<i", head)[0]
            if d <= 0:
                raise ParseError(f"bad fvecs dimension {d}", offset)
            if dimension is not None and d != dimension:
                raise UsageError(f"dimension mismatch: fvecs has {d}, expected {dimension}")
            body = f.read(4 * d)
            if len(body) != 4 * d:
                raise ParseError("truncated fvecs record body", offset + 4)
            out.append(np.frombuffer(body, dtype=np.float32).copy())
            offset += 4 + 4 * d
            if limit is not None and len(out) >= limit:
                break
    return out


def write_fvecs(path, vectors):
    with open(path, "wb") as f:
        for v in vectors:
            v = np.ascontiguousarray(v, dtype=np.float32)
            f.write(struct.pack("<i", v.shape[0]))
            f.write(v.tobytes())


def read_jsonl(path):
    """Line-delimited records: {id?, vector, payload?, scope}."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad JSON on line {lineno}: {e.msg}", e.pos) from e
            if "vector" not in rec or "scope" not in rec:
                raise ParseError(f"line {lineno} missing vector/scope", 0)
            yield rec
