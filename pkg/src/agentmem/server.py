"""Line-delimited JSON interfaces: the stdio server used by external
language bindings, and deterministic trace replay.

One JSON object per line. Requests carry an "op" plus arguments and an
optional "id" echoed back; responses are {"id", "ok", "result"} or
{"id", "ok": false, "error": {"type", "message"}}. Trace files start with a
{"type": "config"} line followed by {"type": "op"} lines.
"""

from __future__ import annotations

import json
import sys

from .core import ScopePermissionError, UsageError
from .engine import SearchResult, Store, StoreConfig


def _result_payload(res: SearchResult) -> dict:
    return {
        "ids": res.ids,
        "distances": [float(d) for d in res.distances],
        "scopes": [h[2] for h in res.hits],
        "stats": {
            "scanned": res.stats.scanned_vectors,
            "coarse": res.stats.coarse_computations,
            "level": res.stats.level_reached,
            "early": res.stats.early_terminated,
        },
    }


def apply_op(store: Store, op: dict):
    kind = op["kind"] if "kind" in op else op["op"]
    if kind == "search":
        res = store.search(
            op.get("agent"),
            op["scopes"],
            op["vector"],
            op.get("k", 5),
            op.get("nprobe"),
        )
        return _result_payload(res)
    if kind == "insert":
        vectors = op["vectors"] if "vectors" in op else [op["vector"]]
        payloads = op.get("payloads")
        if payloads is None and "payload" in op:
            payloads = [op["payload"]]
        ids = store.insert(op.get("agent"), op["scope"], vectors, payloads, op.get("ids"))
        return {"ids": ids}
    if kind == "update":
        ok = store.update(op.get("agent"), op["item"], op.get("vector"), op.get("payload"))
        return {"updated": ok}
    if kind == "delete":
        ok = store.delete(op.get("agent"), op["item"])
        return {"deleted": ok}
    if kind == "end_request":
        store.end_request(op["agent"])
        return {}
    raise UsageError(f"unknown op kind {kind!r}")


class StdioServer:
    """One store per process, driven over stdin/stdout."""

    def __init__(self, stdin=None, stdout=None):
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.store: Store | None = None

    def _respond(self, req_id, ok: bool, payload):
        msg = {"id": req_id, "ok": ok}
        if ok:
            msg["result"] = payload
        else:
            msg["error"] = payload
        self.stdout.write(json.dumps(msg, separators=(",", ":")) + "\n")
        self.stdout.flush()

    def handle(self, req: dict):
        op = req.get("op")
        if op == "create":
            cfg = dict(req["cfg"])
            self.store = Store(StoreConfig(**cfg))
            return {"scopes": self.store.registered_scopes(), "seed": self.store.seed}
        if op == "close":
            if self.store is not None:
                self.store.close()
                self.store = None
            return {"closed": True}
        if self.store is None:
            raise UsageError("no store: send a create request first")
        if op == "register_agent":
            return {"scope": self.store.register_agent(req["agent"])}
        if op == "unregister_agent":
            self.store.unregister_agent(req["agent"])
            return {}
        if op == "get":
            info = self.store.get_item(req["item"])
            if info is None:
                return {"found": False}
            vec, payload, scope = info
            return {
                "found": True,
                "vector": [float(x) for x in vec],
                "payload": payload.decode("utf-8", errors="replace"),
                "scope": scope,
            }
        if op == "stats":
            return {
                "live": self.store.live_count(),
                "clusters": len(self.store.clusters.clusters),
                "scopes": self.store.registered_scopes(),
                "tier": {
                    k: v for k, v in self.store.tier.metrics().items() if k != "migration_us"
                },
            }
        if op == "snapshot":
            self.store.snapshot(req["path"])
            return {}
        if op == "restore":
            if self.store is not None:
                self.store.close()
            self.store = Store.restore(req["path"])
            return {"scopes": self.store.registered_scopes()}
        return apply_op(self.store, req)

    def serve(self):
        for line in self.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                req = json.loads(line)
            except json.JSONDecodeError as e:
                self._respond(None, False, {"type": "parse", "message": str(e)})
                continue
            req_id = req.get("id")
            try:
                result = self.handle(req)
            except ScopePermissionError as e:
                self._respond(req_id, False, {"type": "permission", "message": str(e)})
                continue
            except (UsageError, KeyError, TypeError, ValueError) as e:
                self._respond(req_id, False, {"type": "usage", "message": str(e)})
                continue
            self._respond(req_id, True, result)
            if req.get("op") == "close":
                break


def replay_trace(trace_path, out=None) -> list[dict]:
    """Replay a trace file; returns (and optionally writes) search results."""
    results: list[dict] = []
    store: Store | None = None
    out_f = open(out, "w") if out is not None else None
    try:
        with open(trace_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("type") == "config":
                    cfg_kw = rec.get("store", {})
                    cfg_kw.setdefault("dimension", rec["dimension"])
                    cfg_kw.setdefault("seed", rec.get("seed", 0))
                    store = Store(StoreConfig(**cfg_kw))
                    for agent in rec.get("agents", []):
                        store.register_agent(agent)
                    spec_dict = rec.get("spec")
                    if spec_dict and spec_dict.get("static_base"):
                        # the base is not in the op stream; regenerate it
                        from .bench.workload import WorkloadSpec, generate_workload

                        base = generate_workload(WorkloadSpec(**spec_dict)).base_vectors
                        store.bulk_build("static", base)
                    continue
                if store is None:
                    raise UsageError("trace has no leading config line")
                payload = apply_op(store, rec)
                if rec.get("kind") == "search":
                    results.append(payload)
                    if out_f is not None:
                        out_f.write(json.dumps(payload, separators=(",", ":")) + "\n")
    finally:
        if out_f is not None:
            out_f.close()
        if store is not None:
            store.close()
    return results
