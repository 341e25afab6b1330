"""Independent reference implementations used as test oracles.

Deliberately written against different primitives than the library code:
the square oracle runs capped BFS, the conflict oracle scans square-graph
edges, and the split-flag oracle recounts sides from scratch.
"""
from __future__ import annotations

import math
from collections import deque


def bfs_square_adjacency(adjacency):
    """All-pairs BFS with depth cap 2."""
    n = len(adjacency)
    out = []
    for s in range(n):
        dist = {s: 0}
        dq = deque([s])
        while dq:
            u = dq.popleft()
            if dist[u] == 2:
                continue
            for w in adjacency[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    dq.append(w)
        out.append(tuple(sorted(v for v, d in dist.items() if 0 < d <= 2)))
    return tuple(out)


def square_edge_conflicts(g, coloring):
    """Conflicts found by scanning every edge of the square graph."""
    sq = bfs_square_adjacency(g.adjacency)
    bad = set()
    for u in range(g.n):
        cu = coloring[u]
        if cu is None:
            continue
        for v in sq[u]:
            if u < v and coloring[v] == cu:
                bad.add((u, v, cu))
    return sorted(bad)


def brute_force_flags(adjacency, partition, sides, lam):
    """Literal recount of the refinement-splitting failure flags."""
    n = len(adjacency)
    threshold = 12.0 * math.log2(n) / (lam * lam)
    flags = []
    for v in range(n):
        fail = 0
        parts = sorted(set(partition[u] for u in adjacency[v]))
        for i in parts:
            members = [u for u in adjacency[v] if partition[u] == i]
            deg = len(members)
            if deg < threshold:
                continue
            red = sum(1 for u in members if sides[u] == 0)
            blue = deg - red
            if max(red, blue) > (1.0 + lam) * deg / 2.0:
                fail = 1
        flags.append(fail)
    return flags


def free_colors(g, coloring, v, palette_size):
    """Palette colors not used within distance 2 of v (BFS recount)."""
    used = set()
    dist = {v: 0}
    dq = deque([v])
    while dq:
        u = dq.popleft()
        if dist[u] == 2:
            continue
        for w in g.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                dq.append(w)
    for u, d in dist.items():
        if u != v and coloring[u] is not None:
            used.add(coloring[u])
    return set(range(palette_size)) - used
