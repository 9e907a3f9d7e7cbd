"""Per-scope coarse graphs over cluster centroids, linked by portal edges.

Each scope keeps a multi-layer navigable graph (bounded degree M). Agent
graphs are probabilistically connected into the static graph through portal
edges, so a cross-scope coarse search runs as one traversal: greedy descent
in the static upper layers, then a single best-first frontier that crosses
graphs through portals and seed entries. Agent profiles (per-cluster MRU
lists of local vector ids) reorder fine scans.
"""

from __future__ import annotations

import heapq

import numpy as np

from .core import STATIC_SCOPE, Metric, UsageError, batch_distances


class _Node:
    __slots__ = ("cid", "level", "neighbors")

    def __init__(self, cid: int, level: int):
        self.cid = cid
        self.level = level
        # one list per layer 0..level; lists are replaced, never mutated,
        # so concurrent readers always see a complete neighbor set
        self.neighbors: list[list[int]] = [[] for _ in range(level + 1)]


class CoarseGraph:
    def __init__(self, scope: str):
        self.scope = scope
        self.nodes: dict[int, _Node] = {}
        self.entry: int | None = None
        self.max_level = -1
        self._spacing_sum = 0.0
        self._spacing_n = 0

    def note_spacing(self, d: float):
        self._spacing_sum += d
        self._spacing_n += 1

    @property
    def mean_spacing(self) -> float | None:
        if self._spacing_n == 0:
            return None
        return self._spacing_sum / self._spacing_n

    def reset_entry(self):
        best = None
        for cid, node in self.nodes.items():
            if best is None or node.level > self.nodes[best].level or (
                node.level == self.nodes[best].level and cid < best
            ):
                best = cid
        self.entry = best
        self.max_level = self.nodes[best].level if best is not None else -1


def portal_probability(d_static: float, d_agent: float, alpha_ic: float) -> float:
    """1/ef_connect with ef_connect = max(alpha_ic * d_static/d_agent, 1).

    Clamping at 1 from below keeps the reciprocal a valid probability while
    preserving the regime behaviour: a coarser static graph (large spacing
    ratio) yields sparse portals, similar densities yield p = 1.
    """
    if d_agent <= 0.0:
        return 1.0
    ef_connect = max(alpha_ic * d_static / d_agent, 1.0)
    return 1.0 / ef_connect


class HybridGraphIndex:
    """All scopes' coarse graphs plus portal edges and search traversal."""

    def __init__(
        self,
        centroid_of,
        metric: Metric,
        rng: np.random.Generator,
        m: int = 16,
        ef_search_factor: int = 4,
        alpha_ic: float = 6.0,
        ef_construction: int = 100,
    ):
        self.centroid_of = centroid_of
        self.metric = metric
        self.rng = rng
        self.m = m
        self.ef_search_factor = ef_search_factor
        self.alpha_ic = alpha_ic
        self.ef_construction = max(ef_construction, m)
        self.graphs: dict[str, CoarseGraph] = {}
        self.portals: dict[int, list[int]] = {}
        self.portal_pairs: set[tuple[int, int]] = set()
        self.scope_of: dict[int, str] = {}
        self.spacing_override: dict[str, float] = {}  # test seam for fixed spacings

    def register_scope(self, scope: str):
        self.graphs.setdefault(scope, CoarseGraph(scope))

    def _spacing(self, scope: str) -> float | None:
        if scope in self.spacing_override:
            return self.spacing_override[scope]
        g = self.graphs.get(scope)
        return g.mean_spacing if g else None

    def _dist(self, q: np.ndarray, cid: int, counter: list[int]) -> float:
        counter[0] += 1
        return float(batch_distances(q, self.centroid_of(cid)[None, :], self.metric)[0])

    # --- mutation ---

    def _draw_level(self) -> int:
        level = 0
        while self.rng.random() < 0.5:
            level += 1
        return level

    def _select_neighbors(self, q: np.ndarray, candidates: list[tuple[float, int]]) -> list[int]:
        candidates = sorted(candidates)
        return [cid for _, cid in candidates[: self.m]]

    def _search_layer(
        self,
        q: np.ndarray,
        entries: list[tuple[float, int]],
        layer: int,
        ef: int,
        graph: CoarseGraph,
        counter: list[int],
    ) -> list[tuple[float, int]]:
        visited = {cid for _, cid in entries}
        cand = list(entries)
        heapq.heapify(cand)
        best = [(-d, cid) for d, cid in entries]
        heapq.heapify(best)
        while cand:
            d, cid = heapq.heappop(cand)
            if best and d > -best[0][0] and len(best) >= ef:
                break
            node = graph.nodes.get(cid)
            if node is None or layer > node.level:
                continue
            for nb in node.neighbors[layer]:
                if nb in visited:
                    continue
                visited.add(nb)
                nd = self._dist(q, nb, counter)
                if len(best) < ef or nd < -best[0][0]:
                    heapq.heappush(cand, (nd, nb))
                    heapq.heappush(best, (-nd, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-nd, cid) for nd, cid in best)

    def insert(self, scope: str, cid: int) -> bool:
        """Insert a cluster node; returns True when a portal was created."""
        g = self.graphs.get(scope)
        if g is None:
            raise UsageError(f"unknown scope {scope!r}")
        if cid in g.nodes:
            return False  # duplicate insert is a no-op
        q = self.centroid_of(cid)
        level = self._draw_level()
        node = _Node(cid, level)
        g.nodes[cid] = node
        self.scope_of[cid] = scope
        counter = [0]

        if g.entry is None or len(g.nodes) == 1:
            g.entry = cid
            g.max_level = level
        else:
            ep = g.entry
            d_ep = self._dist(q, ep, counter)
            eps = [(d_ep, ep)]
            for layer in range(g.max_level, level, -1):
                eps = self._search_layer(q, eps, layer, 1, g, counter)
            nearest_seen = eps[0][0] if eps else None
            for layer in range(min(level, g.max_level), -1, -1):
                cands = self._search_layer(q, eps, layer, self.ef_construction, g, counter)
                if cands:
                    nearest_seen = cands[0][0]
                chosen = self._select_neighbors(q, cands)
                node.neighbors[layer] = list(chosen)
                for nb in chosen:
                    nbn = g.nodes[nb]
                    if layer > nbn.level:
                        continue
                    cur = nbn.neighbors[layer]
                    if cid in cur:
                        continue
                    new = cur + [cid]
                    if len(new) > self.m:
                        nq = self.centroid_of(nb)
                        scored = [(self._dist(nq, x, counter), x) for x in new]
                        new = [x for _, x in sorted(scored)[: self.m]]
                    nbn.neighbors[layer] = new
                eps = cands
            if level > g.max_level:
                g.entry = cid
                g.max_level = level
            if nearest_seen is not None:
                if self.metric is Metric.SQUARED_EUCLIDEAN:
                    g.note_spacing(float(np.sqrt(max(nearest_seen, 0.0))))
                else:
                    g.note_spacing(max(nearest_seen, 0.0))

        if scope == STATIC_SCOPE:
            return False
        return self._maybe_portal(scope, cid, q)

    def _maybe_portal(self, scope: str, cid: int, q: np.ndarray) -> bool:
        static = self.graphs.get(STATIC_SCOPE)
        if static is None or static.entry is None:
            return False
        d_static = self._spacing(STATIC_SCOPE)
        d_agent = self._spacing(scope)
        if d_static is None or d_agent is None:
            return False
        p = portal_probability(d_static, d_agent, self.alpha_ic)
        if self.rng.random() >= p:
            return False
        counter = [0]
        eps = [(self._dist(q, static.entry, counter), static.entry)]
        for layer in range(static.max_level, 0, -1):
            eps = self._search_layer(q, eps, layer, 1, static, counter)
        eps = self._search_layer(q, eps, 0, 4, static, counter)
        target = eps[0][1]
        if (cid, target) in self.portal_pairs:
            return False
        self.portal_pairs.add((cid, target))
        self.portals.setdefault(cid, []).append(target)
        self.portals.setdefault(target, []).append(cid)  # traversal starts static-side
        return True

    def remove(self, scope: str, cid: int):
        g = self.graphs.get(scope)
        if g is None or cid not in g.nodes:
            return  # unknown node is a no-op
        node = g.nodes.pop(cid)
        self.scope_of.pop(cid, None)
        counter = [0]
        # strip every reference (in-edges are not mirrored in the node's own
        # lists), then rewire the losers through the removed node's peers
        for other in g.nodes.values():
            for layer in range(other.level + 1):
                if cid not in other.neighbors[layer]:
                    continue
                cur = [x for x in other.neighbors[layer] if x != cid]
                peers = [
                    x
                    for x in (node.neighbors[layer] if layer <= node.level else [])
                    if x != other.cid and x in g.nodes and x not in cur
                ]
                if peers:
                    aq = self.centroid_of(other.cid)
                    scored = [(self._dist(aq, x, counter), x) for x in cur + peers]
                    cur = [x for _, x in sorted(scored)[: self.m]]
                other.neighbors[layer] = cur
        for other in self.portals.pop(cid, []):
            if other in self.portals:
                self.portals[other] = [x for x in self.portals[other] if x != cid]
                if not self.portals[other]:
                    del self.portals[other]
            self.portal_pairs.discard((cid, other))
            self.portal_pairs.discard((other, cid))
        if g.entry == cid:
            g.reset_entry()
        self._reconnect_unreachable(g, counter)

    def _reconnect_unreachable(self, g: CoarseGraph, counter: list[int]):
        """Edge from the nearest reachable node into any orphaned component.

        Runs only on node removal (cluster retirement), so the sweep stays
        off the search path; it makes entry-reachability unconditional.
        """
        if g.entry is None or len(g.nodes) <= 1:
            return
        reachable = {g.entry}
        frontier = [g.entry]
        while frontier:
            nxt = []
            for cid in frontier:
                for nb in g.nodes[cid].neighbors[0]:
                    if nb in g.nodes and nb not in reachable:
                        reachable.add(nb)
                        nxt.append(nb)
            frontier = nxt
        missing = sorted(set(g.nodes) - reachable)
        for orphan in missing:
            if orphan in reachable:
                continue
            oq = self.centroid_of(orphan)
            anchor = min(reachable, key=lambda r: (self._dist(oq, r, counter), r))
            an = g.nodes[anchor]
            cur = an.neighbors[0]
            if orphan not in cur:
                new = cur + [orphan]
                if len(new) > self.m:
                    aq = self.centroid_of(anchor)
                    scored = sorted((self._dist(aq, x, counter), x) for x in new if x != orphan)
                    new = [x for _, x in scored[: self.m - 1]] + [orphan]
                an.neighbors[0] = new
            # absorb the orphan's whole component
            frontier = [orphan]
            reachable.add(orphan)
            while frontier:
                nxt = []
                for cid in frontier:
                    for nb in g.nodes[cid].neighbors[0]:
                        if nb in g.nodes and nb not in reachable:
                            reachable.add(nb)
                            nxt.append(nb)
                frontier = nxt

    # --- search ---

    def search(
        self,
        q: np.ndarray,
        scopes: set[str],
        nprobe: int,
        ef_search: int | None = None,
    ) -> tuple[list[tuple[int, float]], int]:
        """Single-traversal cross-scope coarse search.

        Returns up to nprobe in-scope clusters sorted by centroid distance,
        plus the number of centroid distance computations performed.
        """
        if nprobe < 1:
            raise UsageError("nprobe must be >= 1")
        for sc in scopes:
            if sc not in self.graphs:
                raise UsageError(f"unknown scope {sc!r}")
        if ef_search is None:
            ef_search = self.ef_search_factor * nprobe
        ef = max(ef_search, nprobe)
        counter = [0]
        expand_scopes = set(scopes) | {STATIC_SCOPE}

        seeds: list[tuple[float, int]] = []
        static = self.graphs.get(STATIC_SCOPE)
        if static is not None and static.entry is not None:
            d = self._dist(q, static.entry, counter)
            eps = [(d, static.entry)]
            for layer in range(static.max_level, 0, -1):
                eps = self._search_layer(q, eps, layer, 1, static, counter)
            seeds.extend(eps)
        for sc in sorted(scopes):
            if sc == STATIC_SCOPE:
                continue
            g = self.graphs[sc]
            if g.entry is not None:
                seeds.append((self._dist(q, g.entry, counter), g.entry))

        if not seeds:
            return [], counter[0]

        visited = {cid for _, cid in seeds}
        dists: dict[int, float] = {cid: d for d, cid in seeds}
        cand = list(seeds)
        heapq.heapify(cand)
        best = [(-d, cid) for d, cid in seeds]
        heapq.heapify(best)
        while cand:
            d, cid = heapq.heappop(cand)
            if best and d > -best[0][0] and len(best) >= ef:
                break
            sc = self.scope_of.get(cid)
            node = self.graphs[sc].nodes.get(cid) if sc else None
            if node is None:
                continue
            links = list(node.neighbors[0])
            for p in self.portals.get(cid, []):
                if self.scope_of.get(p) in expand_scopes:
                    links.append(p)
            for nb in links:
                if nb in visited:
                    continue
                visited.add(nb)
                nd = self._dist(q, nb, counter)
                dists[nb] = nd
                if len(best) < ef or nd < -best[0][0]:
                    heapq.heappush(cand, (nd, nb))
                    heapq.heappush(best, (-nd, nb))
                    if len(best) > ef:
                        heapq.heappop(best)

        emitted = [
            (cid, d) for cid, d in dists.items() if self.scope_of.get(cid) in scopes
        ]
        emitted.sort(key=lambda t: (t[1], t[0]))
        return emitted[:nprobe], counter[0]

    def search_independent(
        self,
        q: np.ndarray,
        scopes: set[str],
        nprobe: int,
        ef_search: int | None = None,
    ) -> tuple[list[tuple[int, float]], int]:
        """Baseline: one full search per scope graph, results merged."""
        if ef_search is None:
            ef_search = self.ef_search_factor * nprobe
        ef = max(ef_search, nprobe)
        counter = [0]
        merged: dict[int, float] = {}
        for sc in sorted(scopes):
            g = self.graphs.get(sc)
            if g is None or g.entry is None:
                continue
            eps = [(self._dist(q, g.entry, counter), g.entry)]
            for layer in range(g.max_level, 0, -1):
                eps = self._search_layer(q, eps, layer, 1, g, counter)
            found = self._search_layer(q, eps, 0, ef, g, counter)
            for d, cid in found:
                merged[cid] = d
        emitted = sorted(merged.items(), key=lambda t: (t[1], t[0]))
        return emitted[:nprobe], counter[0]

    def debug_dump(self) -> str:
        lines = []
        for scope in sorted(self.graphs):
            g = self.graphs[scope]
            lines.append(f"scope {scope}: entry={g.entry} nodes={len(g.nodes)}")
            for cid in sorted(g.nodes):
                node = g.nodes[cid]
                for layer in range(node.level + 1):
                    lines.append(f"  {cid} L{layer} -> {sorted(node.neighbors[layer])}")
        pairs = sorted(self.portal_pairs)
        lines.append(f"portals: {pairs}")
        return "\n".join(lines)


# --- agent profiles ---


def profile_reorder(entries: list[int], default_order: list[int]) -> list[int]:
    """Profile entries first, remaining ids after; both keep relative order."""
    default_set = set(default_order)
    seen = set()
    front = []
    for lid in entries:
        if lid in default_set and lid not in seen:
            front.append(lid)
            seen.add(lid)
    rest = [lid for lid in default_order if lid not in seen]
    return front + rest


def profile_promote(entries: list[int], hits: list[int], p_size: int) -> list[int]:
    """Move hit ids to the front (hit order kept), truncate to p_size."""
    hit_seen = set()
    front = []
    for lid in hits:
        if lid not in hit_seen:
            front.append(lid)
            hit_seen.add(lid)
    rest = [lid for lid in entries if lid not in hit_seen]
    return (front + rest)[:p_size]
