"""Workload generation for the four agent access patterns.

The synthetic step-wise generator samples G group centers per agent on the
unit sphere; step s of every request draws near group (s mod G), which
reproduces inter-request step-wise locality: the same reasoning step lands
in the same region across requests. Traces are byte-deterministic per
(spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from ..core import STATIC_SCOPE, UsageError


class Pattern(Enum):
    ONE_SEARCH_ONE_INSERT = "one-search-one-insert"
    STEP_SEARCH_THEN_INSERT = "step-search-then-insert"
    SEARCH_THEN_STEP_INSERT = "search-then-step-insert"
    SEARCH_ONLY = "search-only"


@dataclass
class TraceOp:
    kind: str  # "search" | "insert" | "end_request"
    agent: str
    vector: np.ndarray | None = None
    scopes: list[str] | None = None  # search
    scope: str | None = None  # insert
    k: int = 5
    group: int = -1
    request: int = -1
    step: int = -1

    def to_json(self) -> str:
        d = {"type": "op", "kind": self.kind, "agent": self.agent}
        if self.vector is not None:
            d["vector"] = [float(x) for x in self.vector]
        if self.scopes is not None:
            d["scopes"] = self.scopes
        if self.scope is not None:
            d["scope"] = self.scope
        if self.kind == "search":
            d["k"] = self.k
        if self.group >= 0:
            d.update(group=self.group, request=self.request, step=self.step)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


@dataclass
class WorkloadSpec:
    pattern: Pattern = Pattern.ONE_SEARCH_ONE_INSERT
    agents: int = 1
    requests: int = 100
    steps: int = 3
    groups: int = 3
    sigma: float | None = None  # per-coordinate spread; default ties to group spacing
    dimension: int = 64
    k: int = 5
    seed: int = 0
    static_base: int = 0  # shared base vectors built before the trace

    def __post_init__(self):
        if isinstance(self.pattern, str):
            self.pattern = Pattern(self.pattern)
        if min(self.agents, self.requests, self.steps, self.groups) < 1:
            raise UsageError("agents/requests/steps/groups must all be >= 1")
        if self.sigma is None:
            # intra-group spread ~= 0.2x the typical unit-sphere center gap
            self.sigma = 0.2 * np.sqrt(2.0) / np.sqrt(self.dimension)
        if self.sigma <= 0:
            raise UsageError("sigma must be positive")

    def agent_names(self) -> list[str]:
        return [f"agent{i}" for i in range(self.agents)]

    def to_json(self) -> str:
        d = asdict(self)
        d["pattern"] = self.pattern.value
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


@dataclass
class Trace:
    spec: WorkloadSpec
    ops: list[TraceOp]
    base_vectors: np.ndarray  # static base, built before replay
    group_centers: dict[str, np.ndarray] = field(default_factory=dict)

    def to_jsonl(self) -> str:
        head = {
            "type": "config",
            "dimension": self.spec.dimension,
            "seed": self.spec.seed,
            "agents": self.spec.agent_names(),
            "spec": json.loads(self.spec.to_json()),
        }
        lines = [json.dumps(head, sort_keys=True, separators=(",", ":"))]
        lines.extend(op.to_json() for op in self.ops)
        return "\n".join(lines) + "\n"


def _unit_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def generate_workload(spec: WorkloadSpec) -> Trace:
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    base = _unit_sphere(rng, spec.static_base, spec.dimension) if spec.static_base else (
        np.empty((0, spec.dimension), dtype=np.float32)
    )
    agents = spec.agent_names()
    centers = {a: _unit_sphere(rng, spec.groups, spec.dimension) for a in agents}

    def draw(agent: str, step: int) -> tuple[np.ndarray, int]:
        g = step % spec.groups
        v = centers[agent][g] + rng.normal(0.0, spec.sigma, spec.dimension)
        return v.astype(np.float32), g

    ops: list[TraceOp] = []
    scopes = [STATIC_SCOPE]  # searched alongside the agent's own scope

    for r in range(spec.requests):
        agent = agents[r % spec.agents]
        for s in range(spec.steps):
            if spec.pattern in (
                Pattern.ONE_SEARCH_ONE_INSERT,
                Pattern.STEP_SEARCH_THEN_INSERT,
                Pattern.SEARCH_ONLY,
            ) or (spec.pattern is Pattern.SEARCH_THEN_STEP_INSERT and s == 0):
                v, g = draw(agent, s)
                ops.append(
                    TraceOp(
                        "search",
                        agent,
                        vector=v,
                        scopes=[agent] + scopes,
                        k=spec.k,
                        group=g,
                        request=r,
                        step=s,
                    )
                )
            if spec.pattern is Pattern.ONE_SEARCH_ONE_INSERT or (
                spec.pattern is Pattern.SEARCH_THEN_STEP_INSERT
            ):
                v, g = draw(agent, s)
                ops.append(
                    TraceOp(
                        "insert", agent, vector=v, scope=agent, group=g, request=r, step=s
                    )
                )
        if spec.pattern is Pattern.STEP_SEARCH_THEN_INSERT:
            v, g = draw(agent, spec.steps - 1)
            ops.append(
                TraceOp(
                    "insert",
                    agent,
                    vector=v,
                    scope=agent,
                    group=g,
                    request=r,
                    step=spec.steps - 1,
                )
            )
        ops.append(TraceOp("end_request", agent, request=r))

    return Trace(spec, ops, base, centers)
