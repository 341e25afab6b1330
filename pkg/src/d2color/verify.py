"""Centralized verification oracles: coloring validity, leeway/slack, splitting audits.

These run over immutable snapshots and are never consulted by node programs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .graph import Graph

LIVE = None  # absent color marker in partial colorings


@dataclass
class VerifyReport:
    valid: bool
    violations: list = field(default_factory=list)   # (u, v, color)
    live_nodes: list = field(default_factory=list)
    distinct_colors: int = 0
    max_color: int = -1
    bound: int | None = None
    bound_ok: bool = True
    leeway: dict | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "valid": self.valid,
                "violations": self.violations[:64],
                "violation_count": len(self.violations),
                "live_nodes": self.live_nodes[:64],
                "live_count": len(self.live_nodes),
                "distinct_colors": self.distinct_colors,
                "max_color": self.max_color,
                "bound": self.bound,
                "bound_ok": self.bound_ok,
            }
        )

    def csv_summary(self) -> str:
        return (
            f"valid={int(self.valid)},violations={len(self.violations)},"
            f"live={len(self.live_nodes)},distinct={self.distinct_colors},"
            f"max_color={self.max_color}"
        )


def check_d2(g: Graph, coloring, bound: int | None = None) -> VerifyReport:
    """Distance-2 validity scan plus palette bound check.

    Two nodes at distance <= 2 always share a closed 1-neighborhood, so
    scanning every {u} + N(u) for duplicate colors finds exactly the
    conflicts an exhaustive square(g) edge scan finds, in O(n + m).
    A partial coloring is reported invalid with the live nodes listed
    separately from conflicts.
    """
    live = [v for v in range(g.n) if coloring[v] is LIVE]
    conflicts = []
    seen_pairs = set()
    for u in range(g.n):
        holder: dict[int, int] = {}
        cu = coloring[u]
        if cu is not LIVE:
            holder[cu] = u
        for w in g.adjacency[u]:
            cw = coloring[w]
            if cw is LIVE:
                continue
            other = holder.get(cw)
            if other is None:
                holder[cw] = w
            elif other != w:
                a, b = (other, w) if other < w else (w, other)
                if (a, b) not in seen_pairs:
                    seen_pairs.add((a, b))
                    conflicts.append((a, b, cw))
    colored = [c for c in coloring if c is not LIVE]
    distinct = len(set(colored))
    max_color = max(colored, default=-1)
    bound_ok = bound is None or max_color < bound
    return VerifyReport(
        valid=not conflicts and not live and bound_ok,
        violations=sorted(conflicts),
        live_nodes=live,
        distinct_colors=distinct,
        max_color=max_color,
        bound=bound,
        bound_ok=bound_ok,
    )


def used_d2_colors(g: Graph, coloring, v: int) -> set[int]:
    """Colors held by the distance-(<=2) neighborhood of v (excluding v)."""
    out = set()
    for u in g.adjacency[v]:
        cu = coloring[u]
        if cu is not LIVE:
            out.add(cu)
        for w in g.adjacency[u]:
            if w == v:
                continue
            cw = coloring[w]
            if cw is not LIVE:
                out.add(cw)
    return out


def remaining_palette(g: Graph, coloring, v: int, palette_size: int | None = None) -> set[int]:
    """Free colors at v: the palette minus colors used among d2-neighbors."""
    size = palette_size if palette_size is not None else g.delta * g.delta + 1
    return set(range(size)) - used_d2_colors(g, coloring, v)


def leeway(g: Graph, coloring, v: int) -> int:
    """Palette colors not used among v's d2-neighbors."""
    return g.delta * g.delta + 1 - len(used_d2_colors(g, coloring, v))


def live_d2_neighbors(g: Graph, coloring, v: int) -> int:
    return sum(1 for u in g.d2_neighbors(v) if coloring[u] is LIVE)


def slack(g: Graph, coloring, v: int) -> int:
    """Leeway minus live d2-neighbor count (additive palette surplus)."""
    return leeway(g, coloring, v) - live_d2_neighbors(g, coloring, v)


@dataclass
class SplitReport:
    flag_sum: int
    flags: list
    worst_imbalance: float     # max over gated (v, i) of max_side / deg_i(v)
    gated_nodes: int           # nodes with at least one part above threshold


def check_split(g: Graph, partition, sides, lam: float) -> SplitReport:
    """Wraps the flag oracle; reports the flag sum and worst imbalance."""
    from .splitting import compute_flags, split_threshold

    flags = compute_flags(g, partition, sides, lam)
    thr = split_threshold(g.n, lam)
    worst = 0.0
    gated = 0
    for v in range(g.n):
        counts: dict[int, list[int]] = {}
        for u in g.adjacency[v]:
            part = partition[u]
            slot = counts.setdefault(part, [0, 0])
            slot[sides[u]] += 1
        node_gated = False
        for reds_blues in counts.values():
            deg = reds_blues[0] + reds_blues[1]
            if deg >= thr:
                node_gated = True
                worst = max(worst, max(reds_blues) / deg)
        if node_gated:
            gated += 1
    return SplitReport(
        flag_sum=sum(flags),
        flags=flags,
        worst_imbalance=worst,
        gated_nodes=gated,
    )
