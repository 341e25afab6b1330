"""Deterministic distance-2 coloring pipeline.

Three stages over the CONGEST kernel: an iterated set-system color reduction
on the square graph down to at most 16*delta^4 colors, a degree-1-polynomial
locally-iterative stage down to a prime q in (4*delta^2, 8*delta^2), and an
iterative color reduction down to maxdeg(G^2)+1 <= delta^2+1 colors.

No stage draws randomness; runs are bit-identical under any kernel schedule.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import congest as cg
from .congest import IDLE, HALT, NodeProgram, PackedPipeline, Vocab, bits_for
from .graph import Graph

LINIAL_COLOR_FACTOR = 16  # final set-system palette is < 16 * delta^4


def is_prime(x: int) -> bool:
    if x < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if x % p == 0:
            return x == p
    d = x - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        y = pow(a, d, x)
        if y in (1, x - 1):
            continue
        for _ in range(r - 1):
            y = y * y % x
            if y == x - 1:
                break
        else:
            return False
    return True


def next_prime(x: int) -> int:
    while not is_prime(x):
        x += 1
    return x


@dataclass(frozen=True)
class FieldPrime:
    q: int


def find_prime(delta: int) -> FieldPrime:
    """Smallest prime q with 4*delta^2 < q < 8*delta^2 (exists for delta >= 1)."""
    if delta < 1:
        raise ValueError("find_prime needs delta >= 1")
    dd = delta * delta
    q = next_prime(4 * dd + 1)
    if q >= 8 * dd:
        raise AssertionError(f"no prime in (4*{dd}, 8*{dd})")  # Bertrand forbids this
    return FieldPrime(q)


@dataclass(frozen=True)
class LinePoly:
    a: int
    b: int

    def eval(self, x: int, q: int) -> int:
        return (self.a + self.b * x) % q


def line_poly(psi: int, q: int) -> LinePoly:
    """Injective map of a color < q^2 to a degree-<=1 polynomial over F_q."""
    return LinePoly(psi // q, psi % q)


def linial_plan(n: int, delta: int) -> list[tuple[int, int, int]]:
    """Iteration plan [(degree d, prime p, input palette size m)].

    Each iteration maps a proper m-coloring of the square graph to a proper
    p^2-coloring via degree-<=d polynomials over F_p with p > delta^2*d, so a
    node can always pick an evaluation point avoiding all d2-neighbors.
    Stops when no candidate shrinks the palette; the fixed point is below
    LINIAL_COLOR_FACTOR * delta^4.
    """
    dd = max(1, delta * delta)
    plan = []
    m = n
    while True:
        best = None
        for d in range(1, 9):
            p = next_prime(dd * d + 1)
            while p ** (d + 1) < m:
                p = next_prime(p + 1)
            if best is None or p * p < best[1] ** 2:
                best = (d, p)
        if best[1] ** 2 >= m:
            break
        plan.append((best[0], best[1], m))
        m = best[1] ** 2
    if m > LINIAL_COLOR_FACTOR * dd * dd:
        raise AssertionError(f"set-system fixed point {m} exceeds {LINIAL_COLOR_FACTOR}*delta^4")
    return plan


def _poly_digits(psi: int, p: int, d: int) -> list[int]:
    out = []
    for _ in range(d + 1):
        out.append(psi % p)
        psi //= p
    return out


def _poly_eval(coeffs: list[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


class _LinialStage(NodeProgram):
    """One set-system iteration: gather d2 colors, then reduce locally.

    Round 0 announces (own color, degree); later rounds pipeline the
    (neighbor id, color) pairs of each node to all its neighbors, packed up
    to the bandwidth cap. A node halts once it has received every declared
    pair and drained its own queue, after recomputing its color.
    """

    def __init__(self, d: int, p: int, m: int, n: int, delta: int, bandwidth: int):
        self.d = d
        self.p = p
        self.m = m
        w = bits_for(m)
        self.vocab = Vocab(
            {
                "mine": (cg.UINT(w), cg.UINT(bits_for(n))),
                "pair": (cg.ID, cg.UINT(w)),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        return {
            "mem": memory,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "vals": {},
            "queue": None,
            "batch": [],
        }

    def _finish(self, view, st):
        mem = st["mem"]
        psi = mem["psi"]
        p, d = self.p, self.d
        mine = _poly_digits(psi, p, d)
        others = sorted(
            {w: val for w, val in st["vals"].items() if w != view.node}.items()
        )
        other_coeffs = [_poly_digits(val, p, d) for _, val in others]
        for x in range(p):
            me = _poly_eval(mine, x, p)
            if all(_poly_eval(oc, x, p) != me for oc in other_coeffs):
                mem["psi"] = x * p + me
                return
        raise AssertionError("no clash-free evaluation point; input coloring improper")

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd == 0:
            if not view.neighbors:
                self._finish(view, st)
                return {}, HALT
            batch = [("mine", mem["psi"], len(view.neighbors))]
            return {nbr: batch for nbr in view.neighbors}, None
        for frm, msg in inbox:
            if msg[0] == "mine":
                st["expected"][frm] = msg[2]
                st["vals"][frm] = msg[1]
            else:
                st["got"][frm] += 1
                if msg[1] != view.node:
                    st["vals"][msg[1]] = msg[2]
        if st["queue"] is None and len(st["expected"]) == len(view.neighbors):
            st["queue"] = [("pair", w, st["vals"][w]) for w in view.neighbors]
        outbox = {}
        if st["queue"]:
            batch = []
            bits = 0
            i = 0
            q = st["queue"]
            while i < len(q):
                b = self._measure(q[i])
                if batch and bits + b > self.cap:
                    break
                batch.append(q[i])
                bits += b
                i += 1
            del q[:i]
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done_recv = len(st["expected"]) == len(view.neighbors) and all(
            st["got"][m_] >= st["expected"][m_] for m_ in view.neighbors
        )
        if done_recv and not st["queue"]:
            self._finish(view, st)
            return outbox, HALT
        return outbox, (None if st["queue"] else IDLE)


class _LocIterStage(NodeProgram):
    """Degree-1 polynomial color tries: phase i tries p_v(i) over F_q.

    Two rounds per phase: even rounds carry candidates (and adoption
    notices from the previous phase), odd rounds carry per-edge conflict
    reports. A distinct line blocks a distinct line at most once, so every
    node adopts within 2*delta^2+1 phases; the counter is audited.
    """

    def __init__(self, q: int):
        self.q = q
        qw = bits_for(q)
        self.vocab = Vocab({"try": (cg.UINT(qw),), "rep": (cg.BIT,), "adopt": (cg.UINT(qw),)})

    def setup(self, view, memory):
        memory["blocked"] = 0
        memory["color2"] = None
        memory["nbr_colors2"] = {}
        poly = line_poly(memory["psi"], self.q)
        return {"mem": memory, "poly": poly, "self_clash": False}

    def _candidate(self, st, phase: int) -> int:
        return st["poly"].eval(phase, self.q)

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd % 2 == 0:
            # decision for phase rnd//2 - 1, then next candidate
            if mem["color2"] is None:
                adopted = False
                if rnd > 0:
                    conflict = st["self_clash"]
                    reports = 0
                    for frm, msg in inbox:
                        if msg[0] == "rep":
                            reports += 1
                            if msg[1]:
                                conflict = True
                        elif msg[0] == "adopt":
                            mem["nbr_colors2"][frm] = msg[1]
                    if reports != len(view.neighbors):
                        raise AssertionError("missing conflict reports")
                    if not conflict:
                        mem["color2"] = self._candidate(st, rnd // 2 - 1)
                        adopted = True
                    else:
                        mem["blocked"] += 1
                else:
                    for frm, msg in inbox:
                        if msg[0] == "adopt":
                            mem["nbr_colors2"][frm] = msg[1]
                if adopted:
                    if not view.neighbors:
                        return {}, IDLE
                    batch = [("adopt", mem["color2"])]
                    return {nbr: batch for nbr in view.neighbors}, IDLE
                phase = rnd // 2
                if phase >= self.q:
                    raise AssertionError("ran out of polynomial phases")
                cand = self._candidate(st, phase)
                st["self_clash"] = cand in set(mem["nbr_colors2"].values())
                if not view.neighbors:
                    mem["color2"] = cand
                    return {}, IDLE
                batch = [("try", cand)]
                return {nbr: batch for nbr in view.neighbors}, rnd + 2
            # colored node: only adoption notices can arrive on even rounds
            for frm, msg in inbox:
                if msg[0] == "adopt":
                    mem["nbr_colors2"][frm] = msg[1]
            return {}, IDLE
        # odd round: act as checker; triers also watch for clashes they can see
        phase = (rnd - 1) // 2
        counts: dict[int, int] = {}
        tries = []
        held = set(mem["nbr_colors2"].values())
        for frm, msg in inbox:
            if msg[0] == "adopt":
                mem["nbr_colors2"][frm] = msg[1]
                held.add(msg[1])
            elif msg[0] == "try":
                tries.append((frm, msg[1]))
                counts[msg[1]] = counts.get(msg[1], 0) + 1
        own_cand = None
        if mem["color2"] is None:
            own_cand = self._candidate(st, phase)
            counts[own_cand] = counts.get(own_cand, 0) + 1
            if own_cand in held or counts.get(own_cand, 0) >= 2:
                st["self_clash"] = True
        outbox = {}
        own_color = mem["color2"]
        for frm, cand in tries:
            clash = (
                counts[cand] >= 2
                or cand in held
                or (own_color is not None and cand == own_color)
            )
            outbox[frm] = [("rep", 1 if clash else 0)]
        if mem["color2"] is None:
            return outbox, rnd + 1
        return outbox, IDLE


class _ReduceGather(NodeProgram):
    """Request-driven d2-color gather for nodes whose color is >= the target.

    Round 0: over-palette nodes raise a need flag. Round 1+: each flagged
    neighbor streams its own color and its (neighbor id, color) pairs, packed.
    Nodes whose color already fits never ask and never receive.
    """

    def __init__(self, c: int, width: int, n: int, delta: int, bandwidth: int):
        self.c = c
        self.vocab = Vocab(
            {
                "need": (),
                "mine": (cg.UINT(width), cg.UINT(bits_for(n))),
                "pair": (cg.ID, cg.UINT(width)),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        needs = memory["color2"] >= self.c
        if needs:
            table = dict(memory["nbr_colors2"])
            memory["d2_colors"] = table
        return {
            "mem": memory,
            "needs": needs,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "targets": [],
            "queue": [],
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd == 0:
            if st["needs"] and view.neighbors:
                batch = [("need",)]
                return {nbr: batch for nbr in view.neighbors}, None
            if st["needs"]:
                return {}, HALT  # isolated: table already complete (empty)
            return {}, IDLE
        outbox = {}
        for frm, msg in inbox:
            if msg[0] == "need":
                st["targets"].append(frm)
            elif msg[0] == "mine":
                st["expected"][frm] = msg[2]
                mem["d2_colors"][frm] = msg[1]
            elif msg[0] == "pair":
                st["got"][frm] += 1
                if msg[1] != view.node:
                    mem["d2_colors"][msg[1]] = msg[2]
        if rnd == 1 and st["targets"]:
            nbr_cols = mem["nbr_colors2"]
            st["queue"] = [("mine", mem["color2"], len(view.neighbors))] + [
                ("pair", w, nbr_cols[w]) for w in view.neighbors
            ]
        if st["queue"]:
            q = st["queue"]
            batch = []
            bits = 0
            i = 0
            while i < len(q):
                b = self._measure(q[i])
                if batch and bits + b > self.cap:
                    break
                batch.append(q[i])
                bits += b
                i += 1
            del q[:i]
            for tgt in st["targets"]:
                outbox[tgt] = batch
        if st["needs"]:
            done = len(st["expected"]) == len(view.neighbors) and all(
                st["got"][m_] >= st["expected"][m_] for m_ in view.neighbors
            )
            if done and not st["queue"]:
                return outbox, IDLE
            return outbox, None
        if st["queue"]:
            return outbox, None
        return outbox, IDLE


class _ReducePhases(NodeProgram):
    """Iterative recoloring: each 3-round phase, every over-palette node that
    holds the strict maximum color of its d2-neighborhood picks the smallest
    free color below the target and broadcasts it two hops. At most one
    notice crosses any node per phase (two recoloring nodes are never within
    distance two of each other).
    """

    def __init__(self, c: int, width: int):
        self.c = c
        self.vocab = Vocab({"rec": (cg.ID, cg.UINT(width)), "recf": (cg.ID, cg.UINT(width))})

    def setup(self, view, memory):
        return {"mem": memory, "over": memory["color2"] >= self.c}

    def _next_boundary(self, rnd: int) -> int:
        return ((rnd // 3) + 1) * 3

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        outbox = {}
        forwards = 0
        for frm, msg in inbox:
            kind, node_id, new_color = msg
            table = mem.get("d2_colors")
            if table is not None and node_id in table:
                table[node_id] = new_color
            if kind == "rec":
                forwards += 1
                batch = [("recf", node_id, new_color)]
                for nbr in view.neighbors:
                    if nbr != frm:
                        outbox.setdefault(nbr, []).extend(batch)
        if forwards > 1:
            raise AssertionError("two recoloring nodes within distance two in one phase")
        if not st["over"]:
            return outbox, IDLE
        if rnd % 3 == 0:
            table = mem["d2_colors"]
            own = mem["color2"]
            if all(own > c for c in table.values()):
                used = set(table.values())
                new_color = next(x for x in range(self.c) if x not in used)
                mem["color2"] = new_color
                st["over"] = False
                batch = [("rec", view.node, new_color)]
                for nbr in view.neighbors:
                    outbox.setdefault(nbr, []).extend(batch)
                return outbox, IDLE
            # not the local maximum yet: sleep until a recolor notice arrives
            return outbox, IDLE
        return outbox, self._next_boundary(rnd)


@dataclass
class DetResult:
    coloring: list
    trace: cg.SimTrace
    q: int
    psi_bound: int
    blocked: list


def max_d2_degree(g: Graph) -> int:
    return max((len(g.d2_neighbors(v)) for v in range(g.n)), default=0)


def d2_color_det(
    g: Graph,
    cfg: cg.SimConfig | None = None,
    *,
    runner: cg.PhaseRunner | None = None,
) -> DetResult:
    """Full deterministic pipeline; uses at most maxdeg(G^2)+1 <= delta^2+1 colors."""
    cfg = cfg or cg.SimConfig()
    if runner is None:
        runner = cg.PhaseRunner(g, cfg)
    n, delta = g.n, g.delta
    if n == 0:
        return DetResult([], runner.trace, 0, 0, [])
    if delta == 0:
        for mem in runner.memories:
            mem["color2"] = 0
            mem["blocked"] = 0
        runner.trace.add_phase("linial", 0)
        return DetResult([0] * n, runner.trace, 0, 1, [0] * n)

    bandwidth = cfg.bandwidth_bits(n)
    for mem, v in zip(runner.memories, range(n)):
        mem["psi"] = v
    plan = linial_plan(n, delta)
    psi_bound = plan[-1][1] ** 2 if plan else n
    if plan:
        for d, p, m in plan:
            prog = _LinialStage(d, p, m, n, delta, bandwidth)
            runner.run(prog, "linial")
    else:
        runner.trace.add_phase("linial", 0)

    q = find_prime(delta).q
    # all q phases are scheduled even though adoption empties the later ones;
    # the declared budget is the protocol's round cost, silent rounds included
    loc = _LocIterStage(q)
    runner.run(loc, "loc_iter", declared=2 * q + 2)
    live = [v for v in range(n) if runner.memories[v]["color2"] is None]
    if live:
        raise AssertionError(f"locally-iterative stage left live nodes: {live[:8]}")

    c = max_d2_degree(g) + 1
    k = q - c
    width = bits_for(q)
    runner.run(_ReduceGather(c, width, n, delta, bandwidth), "reduce_k")
    runner.run(_ReducePhases(c, width), "reduce_k", declared=3 * (k + 1))
    coloring = [runner.memories[v]["color2"] for v in range(n)]
    over = [v for v in range(n) if coloring[v] >= c]
    if over:
        raise AssertionError(f"color reduction left over-palette nodes: {over[:8]}")
    blocked = [runner.memories[v]["blocked"] for v in range(n)]
    return DetResult(coloring, runner.trace, q, psi_bound, blocked)
