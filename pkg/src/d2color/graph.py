"""Graph structures, generators, and centralized distance-2 oracles.

Everything here is centralized bookkeeping for tests, the verifier, and the
experiment harness. Node programs running under the simulator kernel never
call into these oracles; they only see their own adjacency lists.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property


class GraphError(ValueError):
    """Invalid graph construction or generator parameters."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph over dense integer node ids 0..n-1.

    adjacency[v] is the sorted tuple of neighbors of v. Symmetry, absence of
    self-loops and of duplicate edges are enforced at construction.
    """

    adjacency: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.adjacency)

    @cached_property
    def delta(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @cached_property
    def m(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def edges(self):
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if u < v:
                    yield (u, v)

    def has_edge(self, u: int, v: int) -> bool:
        a = self.adjacency[u]
        lo, hi = 0, len(a)
        while lo < hi:
            mid = (lo + hi) // 2
            if a[mid] < v:
                lo = mid + 1
            else:
                hi = mid
        return lo < len(a) and a[lo] == v

    def d2_neighbors(self, v: int) -> set[int]:
        """Set of nodes at distance 1 or 2 from v (excluding v)."""
        out = set(self.adjacency[v])
        for u in self.adjacency[v]:
            out.update(self.adjacency[u])
        out.discard(v)
        return out

    @cached_property
    def square(self) -> "SquareGraph":
        return square(self)


class SquareGraph(Graph):
    """Graph whose edges join nodes at distance 1 or 2 in the base graph."""


def from_edges(n: int, edges) -> Graph:
    """Build a Graph from an iterable of (u, v) pairs with validation."""
    seen: set[tuple[int, int]] = set()
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"node id out of range: ({u}, {v}) with n={n}")
        if u == v:
            raise GraphError(f"self-loop on node {u}")
        key = (u, v) if u < v else (v, u)
        if key in seen:
            raise GraphError(f"duplicate edge ({key[0]}, {key[1]})")
        seen.add(key)
        adj[u].append(v)
        adj[v].append(u)
    return Graph(tuple(tuple(sorted(a)) for a in adj))


def square(g: Graph) -> SquareGraph:
    """Exact square by a 2-step expansion from each node. Deterministic."""
    adj = g.adjacency
    out = []
    for v in range(g.n):
        ball = set(adj[v])
        for u in adj[v]:
            ball.update(adj[u])
        ball.discard(v)
        out.append(tuple(sorted(ball)))
    return SquareGraph(tuple(out))


def common_d2_neighbors(g: Graph, u: int, v: int) -> int:
    """|N_2(u) ∩ N_2(v)| where N_2 is the distance-(≤2) neighborhood."""
    if u == v:
        raise GraphError("common_d2_neighbors requires u != v")
    return len(g.d2_neighbors(u) & g.d2_neighbors(v))


def sparsity(g: Graph, v: int) -> Fraction:
    """Average non-degree of the distance-2 neighborhood of v.

    zeta = (C(D,2) - edges within the d2-neighborhood of v) / D with
    D = delta^2; nodes missing from the neighborhood (when its size is
    below D) contribute no edges, so zeta ranges over [0, (D-1)/2].
    """
    d = g.delta * g.delta
    if d == 0:
        return Fraction(0)
    ball = g.d2_neighbors(v)
    sq = g.square
    inner = sum(len(ball.intersection(sq.adjacency[x])) for x in ball) // 2
    return Fraction(d * (d - 1) // 2 - inner, d)


def _gen_path(n: int) -> Graph:
    return from_edges(n, ((i, i + 1) for i in range(n - 1)))


def _gen_cycle(n: int) -> Graph:
    if n < 3:
        raise GraphError("cycle needs n >= 3")
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def _gen_star(n: int) -> Graph:
    return from_edges(n, ((0, i) for i in range(1, n)))


def _gen_gnp(n: int, p: float, rng: random.Random) -> Graph:
    edges = []
    if p > 0:
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < p:
                    edges.append((u, v))
    return from_edges(n, edges)


def _gen_random_regular(n: int, d: int, rng: random.Random) -> Graph:
    """Pairing-model d-regular graph; resamples until simple."""
    if d >= n or (n * d) % 2 != 0:
        raise GraphError(f"no d-regular graph with n={n}, d={d}")
    if d == 0:
        return Graph(tuple(() for _ in range(n)))
    stubs = [v for v in range(n) for _ in range(d)]
    for _ in range(200):
        rng.shuffle(stubs)
        pairs: set[tuple[int, int]] = set()
        ok = True
        for i in range(0, len(stubs), 2):
            u = stubs[i]
            # greedy partner search avoids the pairing model's restart blowup
            found = False
            for j in range(i + 1, len(stubs)):
                v = stubs[j]
                if v == u:
                    continue
                key = (u, v) if u < v else (v, u)
                if key in pairs:
                    continue
                stubs[i + 1], stubs[j] = stubs[j], stubs[i + 1]
                pairs.add(key)
                found = True
                break
            if not found:
                ok = False
                break
        if ok:
            return from_edges(n, pairs)
    raise GraphError(f"stub matching failed to produce a simple graph (n={n}, d={d})")


def _gen_clique_chain(n: int, k: int) -> Graph:
    """Chain of k-cliques, consecutive cliques joined by a single edge.

    n is rounded down to a multiple of k (at least one clique).
    """
    if k < 2:
        raise GraphError("clique_chain needs clique size k >= 2")
    blocks = max(1, n // k)
    edges = []
    for b in range(blocks):
        base = b * k
        for i in range(k):
            for j in range(i + 1, k):
                edges.append((base + i, base + j))
        if b + 1 < blocks:
            edges.append((base + k - 1, base + k))
    return from_edges(blocks * k, edges)


_PETERSEN_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4), (4, 0),        # outer 5-cycle
    (5, 7), (7, 9), (9, 6), (6, 8), (8, 5),        # inner pentagram
    (0, 5), (1, 6), (2, 7), (3, 8), (4, 9),        # spokes
]


def _gen_petersen(copies: int) -> Graph:
    """Disjoint Petersen graphs: 3-regular, girth 5, square is K10 per copy."""
    if copies < 1:
        raise GraphError("petersen needs copies >= 1")
    edges = []
    for c in range(copies):
        off = 10 * c
        edges.extend((u + off, v + off) for u, v in _PETERSEN_EDGES)
    return from_edges(10 * copies, edges)


def generate(kind: str, seed: int = 0, **params) -> Graph:
    """Deterministic graph generator; fixed (kind, params, seed) fixes the graph."""
    rng = random.Random(("d2color-gen", kind, seed, tuple(sorted(params.items()))).__str__())
    if kind == "path":
        return _gen_path(int(params["n"]))
    if kind == "cycle":
        return _gen_cycle(int(params["n"]))
    if kind == "star":
        return _gen_star(int(params["n"]))
    if kind == "gnp":
        return _gen_gnp(int(params["n"]), float(params["p"]), rng)
    if kind == "random_regular":
        return _gen_random_regular(int(params["n"]), int(params["d"]), rng)
    if kind == "clique_chain":
        return _gen_clique_chain(int(params["n"]), int(params.get("k", 4)))
    if kind == "petersen":
        copies = int(params.get("copies", max(1, int(params.get("n", 10)) // 10)))
        return _gen_petersen(copies)
    raise GraphError(f"unknown generator kind: {kind!r}")


def save_edge_list(g: Graph, path: str) -> None:
    """Write one 'u v' line per edge, with a '# n <N>' header for exact round-trips."""
    with open(path, "w") as fh:
        fh.write(f"# n {g.n}\n")
        for u, v in g.edges():
            fh.write(f"{u} {v}\n")


def load_edge_list(path: str) -> Graph:
    """Parse an edge-list file; rejects self-loops/duplicates with the line number."""
    edges = []
    declared_n = None
    max_id = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                parts = text[1:].split()
                if len(parts) == 2 and parts[0] == "n":
                    declared_n = int(parts[1])
                continue
            parts = text.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'u v', got {text!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: non-integer node id") from exc
            if u < 0 or v < 0:
                raise GraphError(f"{path}:{lineno}: negative node id")
            if u == v:
                raise GraphError(f"{path}:{lineno}: self-loop on node {u}")
            edges.append((u, v, lineno))
            max_id = max(max_id, u, v)
    n = declared_n if declared_n is not None else max_id + 1
    seen: set[tuple[int, int]] = set()
    for u, v, lineno in edges:
        if u >= n or v >= n:
            raise GraphError(f"{path}:{lineno}: node id {max(u, v)} >= n={n}")
        key = (u, v) if u < v else (v, u)
        if key in seen:
            raise GraphError(f"{path}:{lineno}: duplicate edge ({u}, {v})")
        seen.add(key)
    return from_edges(n, ((u, v) for u, v, _ in edges))
