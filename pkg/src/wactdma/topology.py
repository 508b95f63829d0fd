"""Undirected communication graph with k-hop neighborhood queries.

Node ids are non-negative integers that are never reused within a run:
once removed, an id stays retired so traces can tell a departed sensor
from a newly added one.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable


class TopologyError(ValueError):
    pass


@dataclass
class Topology:
    adj: dict[int, set[int]] = field(default_factory=dict)
    retired: set[int] = field(default_factory=set)
    version: int = 0

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], nodes: Iterable[int] = ()) -> "Topology":
        t = cls()
        for u in nodes:
            _check_id(u)
            t.adj.setdefault(u, set())
        for u, v in edges:
            _check_id(u)
            _check_id(v)
            if u == v:
                raise TopologyError(f"invalid edge: self-edge on {u}")
            t.adj.setdefault(u, set()).add(v)
            t.adj.setdefault(v, set()).add(u)
        return t

    # -- queries ---------------------------------------------------------

    @property
    def nodes(self) -> list[int]:
        return sorted(self.adj)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u, nbrs in self.adj.items() for v in nbrs if u < v)

    def __contains__(self, u: int) -> bool:
        return u in self.adj

    def __len__(self) -> int:
        return len(self.adj)

    def neighbors(self, u: int) -> set[int]:
        try:
            return set(self.adj[u])
        except KeyError:
            raise TopologyError(f"no such node: {u}") from None

    def degree(self, u: int) -> int:
        return len(self.neighbors(u))

    def max_degree(self) -> int:
        return max((len(n) for n in self.adj.values()), default=0)

    def distances_from(self, u: int, limit: int | None = None) -> dict[int, int]:
        """BFS hop distances from ``u`` (including ``u`` at 0), optionally cut at ``limit``."""
        if u not in self.adj:
            raise TopologyError(f"no such node: {u}")
        dist = {u: 0}
        queue = deque([u])
        while queue:
            x = queue.popleft()
            if limit is not None and dist[x] >= limit:
                continue
            for y in self.adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return dist

    def distance_neighborhood(self, u: int, k: int) -> set[int]:
        if k < 1:
            raise ValueError("k must be positive")
        return {v for v, d in self.distances_from(u, k).items() if v != u}

    def distance(self, u: int, v: int) -> float:
        return self.distances_from(u).get(v, float("inf"))

    def within(self, u: int, v: int, k: int) -> bool:
        return v in self.distances_from(u, k)

    def max_two_hop_size(self) -> int:
        return max((len(n) for n in self.neighborhoods(2).values()), default=0)

    def neighborhoods(self, k: int) -> dict[int, frozenset[int]]:
        """``distance_neighborhood(u, k)`` for every node, memoized per topology version."""
        cache = self.__dict__.setdefault("_nbhd_cache", {})
        hit = cache.get(k)
        if hit is None or hit[0] != self.version:
            hit = (self.version, {u: frozenset(self.distance_neighborhood(u, k)) for u in self.adj})
            cache[k] = hit
        return hit[1]

    # -- mutation --------------------------------------------------------

    def add_node(self, u: int, attach_to: Iterable[int] = ()) -> "Topology":
        _check_id(u)
        if u in self.adj or u in self.retired:
            raise TopologyError(f"id in use: {u}")
        targets = set(attach_to)
        for v in sorted(targets):
            if v not in self.adj:
                raise TopologyError(f"no such node: {v}")
        self.adj[u] = set(targets)
        for v in targets:
            self.adj[v].add(u)
        self.version += 1
        return self

    def remove_node(self, u: int) -> "Topology":
        if u not in self.adj:
            raise TopologyError(f"no such node: {u}")
        for v in self.adj.pop(u):
            self.adj[v].discard(u)
        self.retired.add(u)
        self.version += 1
        return self

    def copy(self) -> "Topology":
        return Topology({u: set(n) for u, n in self.adj.items()}, set(self.retired), self.version)

    # -- text form -------------------------------------------------------

    def dump(self) -> str:
        lines = [f"node {u}" for u in self.nodes]
        lines += [f"edge {u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Topology":
        nodes, edges = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "node" and len(parts) == 2:
                    nodes.append(int(parts[1]))
                    continue
                if parts[0] == "edge" and len(parts) == 3:
                    edges.append((int(parts[1]), int(parts[2])))
                    continue
            except ValueError:
                pass
            raise TopologyError(f"line {lineno}: cannot parse {raw!r}")
        return cls.from_edges(edges, nodes)


def _check_id(u: int) -> None:
    if not isinstance(u, int) or isinstance(u, bool) or u < 0:
        raise TopologyError(f"node ids must be non-negative integers, got {u!r}")


# -- generators ----------------------------------------------------------


def grid(w: int, h: int) -> Topology:
    """Four-connected ``w`` x ``h`` lattice; node id is ``y * w + x``."""
    if w < 1 or h < 1:
        raise TopologyError("grid dimensions must be positive")
    edges = []
    for y in range(h):
        for x in range(w):
            u = y * w + x
            if x + 1 < w:
                edges.append((u, u + 1))
            if y + 1 < h:
                edges.append((u, u + w))
    return Topology.from_edges(edges, range(w * h))


def path(n: int) -> Topology:
    if n < 1:
        raise TopologyError("path length must be positive")
    return Topology.from_edges([(i, i + 1) for i in range(n - 1)], range(n))


def star(leaves: int) -> Topology:
    """Center 0 with leaves ``1..leaves``."""
    return Topology.from_edges([(0, i) for i in range(1, leaves + 1)], range(leaves + 1))


def random_geometric(n: int, radius: float, seed: int) -> Topology:
    """Uniform points in the unit square, linked when closer than ``radius``.

    The result may be disconnected.
    """
    if n < 1 or radius <= 0:
        raise TopologyError("random_geometric needs n >= 1 and radius > 0")
    rng = random.Random(seed)
    pts = [(rng.random(), rng.random()) for _ in range(n)]
    r2 = radius * radius
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if (pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2 <= r2
    ]
    return Topology.from_edges(edges, range(n))


def generate(spec: dict) -> Topology:
    """Build a topology from a config mapping with a ``kind`` key."""
    kind = spec.get("kind")
    if kind == "grid":
        return grid(int(spec["w"]), int(spec["h"]))
    if kind == "path":
        return path(int(spec["n"]))
    if kind == "star":
        return star(int(spec["leaves"]))
    if kind == "random_geometric":
        return random_geometric(int(spec["n"]), float(spec["radius"]), int(spec["seed"]))
    if kind == "explicit":
        if "text" in spec:
            return Topology.parse(spec["text"])
        return Topology.from_edges(
            [tuple(e) for e in spec.get("edges", [])], spec.get("nodes", [])
        )
    raise TopologyError(f"unknown topology kind: {kind!r}")
