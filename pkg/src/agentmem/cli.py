"""Command-line entry: bench subcommands, trace replay, stdio serving."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import kernels
from .bench.compare import compare_report
from .bench.oracle import StreamingOracle
from .bench.runner import STRATEGIES, run
from .bench.workload import Pattern, WorkloadSpec, generate_workload
from .server import StdioServer, replay_trace


def _spec_from_args(args) -> WorkloadSpec:
    return WorkloadSpec(
        pattern=Pattern(args.pattern),
        agents=args.agents,
        requests=args.requests,
        steps=args.steps,
        groups=args.groups,
        sigma=args.sigma,
        dimension=args.dim,
        k=args.k,
        seed=args.seed,
        static_base=args.static_base,
    )


def cmd_bench_run(args) -> int:
    spec = _spec_from_args(args)
    overrides = json.loads(args.config) if args.config else None
    report = run(
        spec,
        strategy=args.strategy,
        overrides=overrides,
        oracle_recall=not args.no_oracle,
        out_dir=args.out,
    )
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    if args.out:
        print(f"records written to {args.out}/records.csv", file=sys.stderr)
    return 0


def cmd_bench_compare(args) -> int:
    from .bench.runner import RunReport

    a = RunReport.load(args.a)
    b = RunReport.load(args.b)
    print(json.dumps(compare_report(a, b), indent=2, sort_keys=True))
    return 0


def cmd_bench_oracle(args) -> int:
    oracle: StreamingOracle | None = None
    out = open(args.out, "w") if args.out else sys.stdout
    next_id = 0
    with open(args.trace, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "config":
                oracle = StreamingOracle(rec["dimension"])
                spec_dict = rec.get("spec")
                if spec_dict and spec_dict.get("static_base"):
                    base = generate_workload(WorkloadSpec(**spec_dict)).base_vectors
                    for vec in base:
                        oracle.insert(next_id, vec, "static")
                        next_id += 1
                continue
            if oracle is None:
                print("trace has no leading config line", file=sys.stderr)
                return 1
            kind = rec.get("kind")
            if kind == "insert":
                oracle.insert(next_id, np.asarray(rec["vector"], dtype=np.float32), rec["scope"])
                next_id += 1
            elif kind == "search":
                hits = oracle.topk(
                    np.asarray(rec["vector"], dtype=np.float32), rec.get("k", args.k), rec["scopes"]
                )
                out.write(
                    json.dumps(
                        {"ids": [h[0] for h in hits], "distances": [h[1] for h in hits]},
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    if args.out:
        out.close()
    return 0


def cmd_bench_kernels(args) -> int:
    """Time the numba and numpy kernel backends side by side."""
    rng = np.random.default_rng(0)
    q = rng.normal(size=args.dim).astype(np.float32)
    mat = rng.normal(size=(args.n, args.dim)).astype(np.float32)
    cents = rng.normal(size=(32, args.dim)).astype(np.float32)
    rows = []
    for name in ("sq_l2", "neg_ip", "cosine", "kmeans_assign"):
        row = {"kernel": name}
        for backend in ("numpy", "numba"):
            if backend == "numba" and not kernels.HAVE_NUMBA:
                row[backend] = None
                continue
            fn = kernels.BACKENDS[backend][name]
            fn_args = (mat, cents) if name == "kmeans_assign" else (q, mat)
            fn(*fn_args)  # warm-up (JIT compile)
            t0 = time.perf_counter()
            for _ in range(args.repeat):
                fn(*fn_args)
            row[backend] = (time.perf_counter() - t0) / args.repeat
        rows.append(row)
    print(f"active backend: {kernels.ACTIVE_BACKEND}  (n={args.n}, dim={args.dim})")
    print(f"{'kernel':<16}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for row in rows:
        np_ms = row["numpy"] * 1e3
        if row["numba"] is None:
            print(f"{row['kernel']:<16}{np_ms:>12.3f}{'n/a':>12}{'':>10}")
        else:
            nb_ms = row["numba"] * 1e3
            print(f"{row['kernel']:<16}{np_ms:>12.3f}{nb_ms:>12.3f}{np_ms / nb_ms:>10.2f}x")
    return 0


def cmd_serve(args) -> int:
    if not args.stdio:
        print("only --stdio serving is supported", file=sys.stderr)
        return 2
    StdioServer().serve()
    return 0


def cmd_replay(args) -> int:
    results = replay_trace(args.trace, out=args.out)
    if not args.out:
        for r in results:
            print(json.dumps(r, separators=(",", ":")))
    else:
        print(f"{len(results)} search results written to {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agentmem")
    sub = p.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="workload benchmarks")
    bsub = bench.add_subparsers(dest="bench_command", required=True)

    brun = bsub.add_parser("run", help="replay a generated workload")
    brun.add_argument("--pattern", default="one-search-one-insert", choices=[e.value for e in Pattern])
    brun.add_argument("--agents", type=int, default=1)
    brun.add_argument("--requests", type=int, default=100)
    brun.add_argument("--steps", type=int, default=3)
    brun.add_argument("--groups", type=int, default=3)
    brun.add_argument("--sigma", type=float, default=None)
    brun.add_argument("--dim", type=int, default=64)
    brun.add_argument("--k", type=int, default=5)
    brun.add_argument("--static-base", type=int, default=0)
    brun.add_argument("--strategy", default="full", choices=sorted(STRATEGIES))
    brun.add_argument("--seed", type=int, default=0)
    brun.add_argument("--config", help="JSON store-config overrides")
    brun.add_argument("--no-oracle", action="store_true")
    brun.add_argument("--out", help="output directory for records.csv / summary.json")
    brun.set_defaults(fn=cmd_bench_run)

    bcmp = bsub.add_parser("compare", help="ratio table between two run output dirs")
    bcmp.add_argument("a", help="output directory of the first run")
    bcmp.add_argument("b", help="output directory of the second run")
    bcmp.set_defaults(fn=cmd_bench_compare)

    borc = bsub.add_parser("oracle", help="brute-force results for a trace file")
    borc.add_argument("--trace", required=True)
    borc.add_argument("--k", type=int, default=5)
    borc.add_argument("--out")
    borc.set_defaults(fn=cmd_bench_oracle)

    bker = bsub.add_parser("kernels", help="compare numba vs numpy kernel backends")
    bker.add_argument("--dim", type=int, default=64)
    bker.add_argument("--n", type=int, default=100000)
    bker.add_argument("--repeat", type=int, default=5)
    bker.set_defaults(fn=cmd_bench_kernels)

    btrace = bsub.add_parser("trace", help="emit a generated workload as JSONL")
    btrace.add_argument("--pattern", default="one-search-one-insert", choices=[e.value for e in Pattern])
    btrace.add_argument("--agents", type=int, default=1)
    btrace.add_argument("--requests", type=int, default=100)
    btrace.add_argument("--steps", type=int, default=3)
    btrace.add_argument("--groups", type=int, default=3)
    btrace.add_argument("--sigma", type=float, default=None)
    btrace.add_argument("--dim", type=int, default=64)
    btrace.add_argument("--k", type=int, default=5)
    btrace.add_argument("--static-base", type=int, default=0)
    btrace.add_argument("--seed", type=int, default=0)
    btrace.add_argument("--out")
    btrace.set_defaults(fn=cmd_bench_trace)

    serve = sub.add_parser("serve", help="serve a store over stdio JSONL")
    serve.add_argument("--stdio", action="store_true")
    serve.set_defaults(fn=cmd_serve)

    rep = sub.add_parser("replay", help="deterministically replay a trace file")
    rep.add_argument("--trace", required=True)
    rep.add_argument("--out")
    rep.set_defaults(fn=cmd_replay)

    return p


def cmd_bench_trace(args) -> int:
    spec = _spec_from_args(args)
    text = generate_workload(spec).to_jsonl()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
