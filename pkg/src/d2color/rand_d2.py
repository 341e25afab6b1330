"""Randomized distance-2 coloring with a delta^2+1 palette.

Pipeline: random color trials, similarity-graph construction, a leeway
halving ladder of helper-assisted reduce phases, exact remaining-palette
learning through per-block handlers, and a coin-flip finishing loop.
Low-degree graphs delegate to the deterministic pipeline up front.

Color safety is structural: a color try is adopted only if no conflict
report comes back, and simultaneous identical tries reject each other
through their common checker, so the partial coloring is proper at every
round no matter how the constants are tuned.
"""
from __future__ import annotations

import math

from . import congest as cg
from .congest import HALT, IDLE, NodeProgram, Vocab
from .graph import Graph
from .profiles import DESK, Profile
from .similarity import HSampleMixin, HNeighborSampler, build_similarity, xor_string_bits

PRIO_BITS = 16


def _conflict_for(cand, counts, held, checker_color):
    return counts.get(cand, 0) >= 2 or cand in held or cand == checker_color


class _RandomColorTrials(NodeProgram):
    """Every live node repeatedly tries a uniform palette color.

    Even rounds carry candidates and adoption notices, odd rounds carry
    per-edge conflict reports. Simultaneous identical candidates within any
    closed neighborhood reject each other via the shared checker.
    """

    def __init__(self, iterations: int, palette: int):
        self.iterations = iterations
        self.palette = palette
        self.vocab = Vocab({"try": (cg.COLOR,), "rep": (cg.BIT,), "adopt": (cg.COLOR,)})

    def budget(self) -> int:
        return 2 * self.iterations + 1

    def setup(self, view, memory):
        memory.setdefault("color", None)
        memory.setdefault("nbr_colors", {})
        return {"mem": memory, "cand": None, "self_clash": False}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        held_changed = False
        counts: dict[int, int] = {}
        tries = []
        for frm, msg in inbox:
            kind = msg[0]
            if kind == "adopt":
                mem["nbr_colors"][frm] = msg[1]
                held_changed = True
            elif kind == "try":
                tries.append((frm, msg[1]))
                counts[msg[1]] = counts.get(msg[1], 0) + 1
            # "rep" handled below on even rounds
        if rnd % 2 == 1:
            held = set(mem["nbr_colors"].values())
            own_color = mem["color"]
            own_cand = st["cand"]
            if own_cand is not None:
                counts[own_cand] = counts.get(own_cand, 0) + 1
                if own_cand in held or counts[own_cand] >= 2:
                    st["self_clash"] = True
            outbox = {}
            for frm, cand in tries:
                bit = 1 if _conflict_for(cand, counts, held, own_color) else 0
                outbox[frm] = [("rep", bit)]
            return outbox, (rnd + 1 if mem["color"] is None else IDLE)
        # even round: fold reports, then (maybe) a new attempt
        if mem["color"] is not None:
            return {}, IDLE
        outbox = {}
        if st["cand"] is not None:
            conflict = st["self_clash"]
            for frm, msg in inbox:
                if msg[0] == "rep" and msg[1]:
                    conflict = True
            if not conflict:
                mem["color"] = st["cand"]
                if view.neighbors:
                    batch = [("adopt", mem["color"])]
                    outbox = {nbr: batch for nbr in view.neighbors}
                return outbox, IDLE
            st["cand"] = None
        t = rnd // 2
        if t >= self.iterations:
            return outbox, IDLE
        cand = rng.randrange(self.palette)
        if not view.neighbors:
            mem["color"] = cand
            return outbox, IDLE
        st["cand"] = cand
        st["self_clash"] = cand in set(mem["nbr_colors"].values())
        batch = [("try", cand)]
        for nbr in view.neighbors:
            outbox[nbr] = batch
        return outbox, rnd + 2


def initial_trials(runner: cg.PhaseRunner, profile: Profile, iterations: int | None = None):
    g = runner.graph
    iters = iterations if iterations is not None else profile.trial_iterations(g.n)
    prog = _RandomColorTrials(iters, g.delta * g.delta + 1)
    return runner.run(prog, "init_trials", declared=prog.budget())


class _TryOnce(NodeProgram):
    """Single color-try sub-protocol for fixed candidates (test harness)."""

    def __init__(self, candidates: dict[int, int]):
        self.candidates = candidates
        self.vocab = Vocab({"try": (cg.COLOR,), "rep": (cg.BIT,), "adopt": (cg.COLOR,)})

    def setup(self, view, memory):
        memory.setdefault("color", None)
        memory.setdefault("nbr_colors", {})
        return {"mem": memory, "self_clash": False}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        cand = self.candidates.get(view.node)
        if rnd == 0:
            if cand is None:
                return {}, IDLE
            if cand in set(mem["nbr_colors"].values()):
                st["self_clash"] = True
            if not view.neighbors:
                mem["color"] = cand
                return {}, HALT
            batch = [("try", cand)]
            return {nbr: batch for nbr in view.neighbors}, rnd + 2
        if rnd == 1:
            counts: dict[int, int] = {}
            tries = []
            for frm, msg in inbox:
                if msg[0] == "try":
                    tries.append((frm, msg[1]))
                    counts[msg[1]] = counts.get(msg[1], 0) + 1
            if cand is not None:
                counts[cand] = counts.get(cand, 0) + 1
                if counts[cand] >= 2:
                    st["self_clash"] = True
            held = set(mem["nbr_colors"].values())
            outbox = {}
            for frm, c in tries:
                bit = 1 if _conflict_for(c, counts, held, mem["color"]) else 0
                outbox[frm] = [("rep", bit)]
            return outbox, (rnd + 1 if cand is not None else IDLE)
        if rnd == 2 and cand is not None:
            conflict = st["self_clash"] or any(
                msg[0] == "rep" and msg[1] for _, msg in inbox
            )
            if not conflict:
                mem["color"] = cand
                if view.neighbors:
                    batch = [("adopt", cand)]
                    return {nbr: batch for nbr in view.neighbors}, HALT
            return {}, HALT
        for frm, msg in inbox:
            if msg[0] == "adopt":
                mem["nbr_colors"][frm] = msg[1]
        return {}, IDLE


def try_color(runner: cg.PhaseRunner, candidates: dict[int, int], label: str = "try") -> dict[int, bool]:
    """Runs one 2-round try for the given live candidates; returns adoption."""
    before = {v: runner.memories[v].get("color") for v in candidates}
    runner.run(_TryOnce(candidates), label, budget=5)
    return {
        v: runner.memories[v].get("color") is not None and before[v] is None
        for v in candidates
    }


ROUNDS_PER_REDUCE_PHASE = 23  # step budget 2+4+4+2+6+5


class _ReducePhases(NodeProgram, HSampleMixin):
    """rho repetitions of the 23-round helper-assisted reduce phase.

    Round budget per phase: 2 (query seeding) + 4 (single-2-path check) +
    4 (random color check and fresh proposal return) + 2 (forward to a
    sampled similar neighbor) + 6 (d2 check and recycled-color return) +
    5 (uniform try over proposals, including the adoption notice).
    Congestion points keep the query with the highest random priority and
    drop the rest; dropped queries never resurface.
    """

    def __init__(self, phi: float, tau: float, rho: int, profile: Profile, n: int, delta: int):
        self.phi = phi
        self.tau = tau
        self.rho = rho
        self.act_p = profile.activation_prob(phi, tau)
        self.query_p = profile.query_prob(phi)
        self.filt = profile.sampler_filter_bits(n, delta)
        self.rbits = xor_string_bits(n)
        self.palette = delta * delta + 1
        self.vocab = Vocab(
            {
                "qinit": (cg.UINT(PRIO_BITS),),
                "query": (cg.ID, cg.UINT(PRIO_BITS)),
                "pathq": (cg.ID,),
                "pathr": (cg.BIT,),
                "samq": (cg.UINT(self.rbits),),
                "ping": (),
                "pong": (cg.UINT(self.rbits),),
                "samr": (cg.ID, cg.UINT(self.rbits)),
                "hchk": (cg.COLOR,),
                "hchr": (cg.BIT,),
                "fwd": (cg.IDLIST(), cg.UINT(PRIO_BITS), cg.ID),
                "query2": (cg.IDLIST(), cg.UINT(PRIO_BITS)),
                "prop": (cg.IDLIST(), cg.UINT(3), cg.COLOR),
                "d2q": (cg.ID,),
                "d2r": (cg.BIT,),
                "try": (cg.COLOR,),
                "rep": (cg.BIT,),
                "adopt": (cg.COLOR,),
            }
        )

    def budget(self) -> int:
        return ROUNDS_PER_REDUCE_PHASE * self.rho

    def setup(self, view, memory):
        memory.setdefault("counters", {})
        return {"mem": memory, "phase": -1}

    def _fresh_phase(self, st, phase):
        if st["phase"] != phase:
            st["phase"] = phase
            st["props"] = []
            st["q"] = None          # retained query at helper u: (v, u', prio)
            st["q_alive"] = False
            st["chat"] = None       # random check color at u
            st["cand"] = None
            st["self_clash"] = False
            st["sample"] = None     # (w, relay)
            st["sam_b"] = None
            st["direct_q2"] = None
            st["q2hold"] = None
            st["q2"] = None         # retained forwarded query at w: (path, prio)
            st["sam_reqs"] = []
            st["sam_pinged"] = False

    def _bump(self, mem, key, amount=1):
        c = mem["counters"]
        c[key] = c.get(key, 0) + amount

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        phase, off = divmod(rnd, ROUNDS_PER_REDUCE_PHASE)
        self._fresh_phase(st, phase)
        base = phase * ROUNDS_PER_REDUCE_PHASE
        outbox: dict[int, list] = {}
        live = mem["color"] is None
        nbr_colors = mem["nbr_colors"]

        # proposals route hop by hop along their recorded path at any offset
        rest = []
        for frm, msg in inbox:
            if msg[0] == "prop":
                path, pos, color = msg[1], msg[2], msg[3]
                if pos == 0:
                    if path[0] != view.node:
                        raise cg.CongestError("proposal routed to the wrong origin")
                    st["props"].append(color)
                else:
                    nxt, npos = cg.route_back(view.node, view.neighbors, path, pos)
                    outbox.setdefault(nxt, []).append(("prop", path, npos, color))
            elif msg[0] == "adopt":
                nbr_colors[frm] = msg[1]
            else:
                rest.append((frm, msg))
        inbox = rest

        ctl = self._dispatch(view, st, inbox, rnd, rng, phase, off, outbox, mem, live, nbr_colors)
        if mem["color"] is None:
            # a live node never sleeps through its own decision round or the
            # start of the next phase, whatever helper role it just played
            targets = []
            if st["props"] and off < 18:
                targets.append(base + 18)
            if phase + 1 < self.rho and off > 0:
                targets.append(base + ROUNDS_PER_REDUCE_PHASE)
            if targets:
                target = min(targets)
                if ctl == IDLE or (isinstance(ctl, int) and ctl > target):
                    ctl = target
        return outbox, ctl

    def _dispatch(self, view, st, inbox, rnd, rng, phase, off, outbox, mem, live, nbr_colors):
        if off == 0:
            if live and view.neighbors and rng.random() < self.act_p:
                self._bump(mem, "activated")
                prio = rng.getrandbits(PRIO_BITS)
                batch = [("qinit", prio)]
                for nbr in view.neighbors:
                    outbox[nbr] = batch
            if live and phase + 1 < self.rho:
                return (phase + 1) * ROUNDS_PER_REDUCE_PHASE
            return IDLE

        if off == 1:
            best: dict[int, tuple] = {}
            hh_mid = mem["hh_mid"]
            for frm, msg in inbox:
                if msg[0] != "qinit":
                    continue
                v, prio = frm, msg[1]
                for u in view.neighbors:
                    if u == v:
                        continue
                    a, b = (v, u) if v < u else (u, v)
                    if (a, b) not in hh_mid:
                        continue
                    if rng.random() >= self.query_p:
                        continue
                    self._bump(mem, "queries_seeded")
                    key = (prio, v)
                    if u not in best or key > best[u][0]:
                        if u in best:
                            self._bump(mem, "drop_cull")
                        best[u] = (key, v, prio)
                    else:
                        self._bump(mem, "drop_cull")
            for u, (_, v, prio) in best.items():
                outbox[u] = [("query", v, prio)]
            return IDLE

        if off == 2:
            cands = [((msg[2], msg[1], frm), msg[1], frm) for frm, msg in inbox if msg[0] == "query"]
            if cands:
                cands.sort(reverse=True)
                self._bump(mem, "drop_cull", len(cands) - 1)
                _, v, frm = cands[0]
                st["q"] = (v, frm, cands[0][0][0])
                batch = [("pathq", v)]
                for nbr in view.neighbors:
                    outbox[nbr] = batch
                return rnd + 2
            return IDLE

        if off == 3:
            for frm, msg in inbox:
                if msg[0] == "pathq":
                    bit = 1 if msg[1] in view.neighbors else 0
                    outbox.setdefault(frm, []).append(("pathr", bit))
            return IDLE

        if off == 4:
            if st["q"] is not None:
                paths = sum(msg[1] for _, msg in inbox if msg[0] == "pathr")
                if paths != 1:
                    self._bump(mem, "drop_multipath")
                    st["q"] = None
                    return IDLE
                st["q_alive"] = True
                st["sam_b"] = rng.getrandbits(self.rbits)
                batch = [("samq", st["sam_b"])]
                for nbr in view.neighbors:
                    outbox[nbr] = batch
                return rnd + 2
            return IDLE

        if off == 5:
            self.sam_collect(st, inbox)
            pinged = self.sam_ping(view, st, outbox)
            return rnd + 2 if pinged else IDLE

        if off == 6:
            self.sam_pong(view, st, inbox, rng, outbox, self.rbits, phase)
            if st["q_alive"]:
                own = mem["color"]
                while True:
                    chat = rng.randrange(self.palette)
                    if chat != own:
                        break
                st["chat"] = chat
                for nbr in view.neighbors:
                    outbox.setdefault(nbr, []).append(("hchk", chat))
                return rnd + 2
            return rnd + 1 if st.get("sam_pinged") else IDLE

        if off == 7:
            self.sam_reply(view, st, inbox, rng, outbox, mem, self.filt, self.rbits, phase)
            h_mid = mem["h_mid"]
            h_edge = mem["h_edge"]
            for frm, msg in inbox:
                if msg[0] != "hchk":
                    continue
                u, chat = frm, msg[1]
                used = bool(h_edge.get(u)) and mem["color"] == chat
                if not used:
                    for w, cw in nbr_colors.items():
                        if cw != chat or w == u:
                            continue
                        a, b = (u, w) if u < w else (w, u)
                        if (a, b) in h_mid:
                            used = True
                            break
                outbox.setdefault(frm, []).append(("hchr", 1 if used else 0))
            return IDLE

        if off == 8:
            if st["q_alive"]:
                v, uprime, prio = st["q"]
                best = None
                for frm, msg in inbox:
                    if msg[0] == "samr":
                        key = (msg[2] ^ st["sam_b"], msg[1], frm)
                        if best is None or key < best:
                            best = key
                if best is not None:
                    st["sample"] = (best[1], best[2])
                else:
                    self._bump(mem, "sample_failed")
                used = any(msg[0] == "hchr" and msg[1] for _, msg in inbox)
                if not used and st["chat"] is not None:
                    self._bump(mem, "proposals_fresh")
                    path = (v, uprime, view.node)
                    outbox[uprime] = [("prop", path, 1, st["chat"])]
                return rnd + 2
            return IDLE

        if off == 10:
            if st["q_alive"] and st["sample"] is not None:
                v, uprime, prio = st["q"]
                w, relay = st["sample"]
                path = (v, uprime, view.node)
                if relay == view.node:
                    st["direct_q2"] = (path, prio, w)
                    return rnd + 1
                outbox[relay] = [("fwd", path, prio, w)]
            return IDLE

        if off == 11:
            best: dict[int, tuple] = {}
            for frm, msg in inbox:
                if msg[0] == "fwd":
                    path, prio, w = msg[1], msg[2], msg[3]
                    key = (prio, path[0], path[2])
                    if w not in best or key > best[w][0]:
                        if w in best:
                            self._bump(mem, "drop_cull")
                        best[w] = (key, path, prio)
                    else:
                        self._bump(mem, "drop_cull")
            if st["direct_q2"] is not None:
                path, prio, w = st["direct_q2"]
                key = (prio, path[0], path[2])
                if w not in best or key > best[w][0]:
                    best[w] = (key, path, prio)
            hold = None
            for w, (key, path, prio) in sorted(best.items()):
                if w == view.node:
                    # the sampled neighbor is this relay itself: 3-hop route
                    hold = (path, prio)
                elif path[2] == view.node:
                    # direct sample sent by the query holder itself
                    outbox[w] = [("query2", path, prio)]
                else:
                    outbox[w] = [("query2", path + (view.node,), prio)]
            if hold is not None:
                st["q2hold"] = hold
                return rnd + 1
            return IDLE

        if off == 12:
            cands = []
            if st["q2hold"] is not None:
                path, prio = st["q2hold"]
                cands.append(((prio, path[0], path[2]), path))
            for frm, msg in inbox:
                if msg[0] == "query2":
                    cands.append(((msg[2], msg[1][0], msg[1][2]), msg[1]))
            if cands:
                cands.sort(reverse=True)
                self._bump(mem, "drop_cull", len(cands) - 1)
                st["q2"] = (cands[0][1], cands[0][0][0])
                v = cands[0][1][0]
                if mem["color"] is None:
                    self._bump(mem, "drop_live_helper")
                    st["q2"] = None
                    return IDLE
                batch = [("d2q", v)]
                for nbr in view.neighbors:
                    outbox[nbr] = batch
                return rnd + 2
            return IDLE

        if off == 13:
            for frm, msg in inbox:
                if msg[0] == "d2q":
                    bit = 1 if msg[1] in view.neighbors else 0
                    outbox.setdefault(frm, []).append(("d2r", bit))
            return IDLE

        if off == 14:
            if st["q2"] is not None:
                path, prio = st["q2"]
                v = path[0]
                is_d2 = (v in view.neighbors) or any(
                    msg[1] for _, msg in inbox if msg[0] == "d2r"
                )
                if is_d2:
                    self._bump(mem, "drop_d2nbr")
                else:
                    nxt = path[-1]
                    if nxt not in view.neighbors:
                        raise cg.CongestError("return route leaves the graph")
                    self._bump(mem, "proposals_recycled")
                    outbox[nxt] = [("prop", path, len(path) - 1, mem["color"])]
            return IDLE

        if off == 18:
            if st["props"] and mem["color"] is None:
                cand = st["props"][rng.randrange(len(st["props"]))]
                st["cand"] = cand
                st["self_clash"] = cand in set(nbr_colors.values())
                self._bump(mem, "tried")
                batch = [("try", cand)]
                for nbr in view.neighbors:
                    outbox[nbr] = batch
                return rnd + 2
            return IDLE

        if off == 19:
            counts: dict[int, int] = {}
            tries = []
            for frm, msg in inbox:
                if msg[0] == "try":
                    tries.append((frm, msg[1]))
                    counts[msg[1]] = counts.get(msg[1], 0) + 1
            own_cand = st.get("cand") if mem["color"] is None else None
            if own_cand is not None:
                counts[own_cand] = counts.get(own_cand, 0) + 1
                if counts[own_cand] >= 2 or own_cand in set(nbr_colors.values()):
                    st["self_clash"] = True
            held = set(nbr_colors.values())
            for frm, cand in tries:
                bit = 1 if _conflict_for(cand, counts, held, mem["color"]) else 0
                outbox.setdefault(frm, []).append(("rep", bit))
            return IDLE

        if off == 20:
            if st.get("cand") is not None and mem["color"] is None:
                conflict = st["self_clash"] or any(
                    msg[0] == "rep" and msg[1] for _, msg in inbox
                )
                if not conflict:
                    mem["color"] = st["cand"]
                    self._bump(mem, "adopted")
                    batch = [("adopt", mem["color"])]
                    for nbr in view.neighbors:
                        outbox[nbr] = batch
                st["cand"] = None
            return IDLE

        return IDLE


def reduce(runner: cg.PhaseRunner, phi: float, tau: float, profile: Profile, rho: int | None = None):
    """rho activation+reduce-phase repetitions targeting leeway below tau."""
    g = runner.graph
    reps = rho if rho is not None else profile.reduce_repetitions(phi, tau, g.n)
    prog = _ReducePhases(phi, tau, reps, profile, g.n, g.delta)
    label = f"reduce({phi:g},{tau:g})"
    outcome = runner.run(prog, label, declared=prog.budget())
    for mem in runner.memories:
        for key, val in mem.get("counters", {}).items():
            runner.trace.bump(key, val)
        mem["counters"] = {}
    return outcome

def block_size(delta: int, z: int) -> int:
    return max(1, (delta * delta) // z)


def block_of(color: int, delta: int, z: int) -> int:
    return min(color // block_size(delta, z), z - 1)


def block_range(i: int, delta: int, z: int) -> range:
    bs = block_size(delta, z)
    if i >= z - 1:
        return range((z - 1) * bs, delta * delta + 1)
    return range(i * bs, (i + 1) * bs)


class _FloodPalette(NodeProgram):
    """Low-degree path: every node's neighbor colors flood two hops and each
    live node reads off its exact remaining palette."""

    def __init__(self, n: int, delta: int, bandwidth: int):
        self.palette = delta * delta + 1
        self.vocab = Vocab(
            {
                "me": (cg.UINT(cg.bits_for(n)),),
                "pc": (cg.ID, cg.BIT, cg.COLOR),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        return {
            "mem": memory,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "queue": None,
            "used": set(),
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        live = mem["color"] is None
        if rnd == 0:
            if not view.neighbors:
                if live:
                    mem["palette"] = list(range(self.palette))
                return {}, HALT
            nbr_cols = mem["nbr_colors"]
            st["queue"] = [("me", len(view.neighbors))] + [
                ("pc", w, 0 if w in nbr_cols else 1, nbr_cols.get(w, 0))
                for w in view.neighbors
            ]
            st["used"].update(nbr_cols.values())
        outbox = {}
        for frm, msg in inbox:
            if msg[0] == "me":
                st["expected"][frm] = msg[1]
            elif msg[0] == "pc":
                st["got"][frm] += 1
                if live and msg[1] != view.node and not msg[2]:
                    st["used"].add(msg[3])
        q = st["queue"]
        if q:
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
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done = len(st["expected"]) == len(view.neighbors) and all(
            st["got"][m] >= st["expected"][m] for m in view.neighbors
        )
        if done and not st["queue"]:
            if live:
                mem["palette"] = sorted(set(range(self.palette)) - st["used"])
            return outbox, HALT
        return outbox, (None if st["queue"] else IDLE)


class _LiveFlood(NodeProgram):
    """Every node learns the ids of its live d2-neighbors."""

    def __init__(self, n: int, delta: int, bandwidth: int):
        self.vocab = Vocab({"lvh": (cg.UINT(cg.bits_for(n + 1)),), "lv": (cg.ID,)})
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        return {
            "mem": memory,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "queue": None,
            "acc": set(),
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd == 0:
            live_nbrs = [w for w in view.neighbors if w not in mem["nbr_colors"]]
            st["acc"].update(live_nbrs)
            if not view.neighbors:
                mem["live_d2"] = set()
                return {}, HALT
            st["queue"] = [("lvh", len(live_nbrs))] + [("lv", w) for w in live_nbrs]
        outbox = {}
        for frm, msg in inbox:
            if msg[0] == "lvh":
                st["expected"][frm] = msg[1]
            else:
                st["got"][frm] += 1
                if msg[1] != view.node:
                    st["acc"].add(msg[1])
        q = st["queue"]
        if q:
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
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done = len(st["expected"]) == len(view.neighbors) and all(
            st["got"][m] >= st["expected"][m] for m in view.neighbors
        )
        if done and not st["queue"]:
            mem["live_d2"] = set(st["acc"])
            return outbox, HALT
        return outbox, (None if st["queue"] else IDLE)


class _AssignHandlers(NodeProgram):
    """Live nodes delegate palette blocks to their sampled similar neighbors."""

    def __init__(self, z: int, n: int):
        self.z = z
        self.zbits = cg.bits_for(z)
        self.vocab = Vocab(
            {"hass": (cg.UINT(self.zbits), cg.ID), "hassd": (cg.UINT(self.zbits), cg.ID)}
        )

    def setup(self, view, memory):
        memory["handled"] = {}
        memory["handler_blocks"] = {}
        return {"mem": memory}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        outbox = {}
        for frm, msg in inbox:
            if msg[0] == "hass":
                outbox.setdefault(msg[2], []).append(("hassd", msg[1], frm))
            elif msg[0] == "hassd":
                mem["handled"][(msg[2], msg[1])] = frm
        if rnd == 0 and mem["color"] is None and mem.get("h_samples"):
            for i, (w, relay) in enumerate(mem["h_samples"][: self.z]):
                mem["handler_blocks"][i] = (w, relay)
                if relay == w:
                    outbox.setdefault(w, []).append(("hassd", i, view.node))
                else:
                    outbox.setdefault(relay, []).append(("hass", i, w))
            return outbox, IDLE
        return outbox, IDLE

class _InformSets(NodeProgram):
    """Each handler informs a random set of its d2-neighbors (via random
    2-paths) that it handles a block for a live node; informed nodes learn
    the route back."""

    def __init__(self, p_informed: int, z: int, n: int, delta: int, bandwidth: int):
        self.p_informed = p_informed
        self.zbits = cg.bits_for(z)
        cnt_bits = cg.bits_for(p_informed + 1)
        self.vocab = Vocab(
            {
                "icnt": (cg.ID, cg.UINT(self.zbits), cg.UINT(cnt_bits)),
                "inf": (cg.ID, cg.UINT(self.zbits)),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        memory["route_h"] = {}
        memory["informed"] = {}
        return {"mem": memory, "pipe": cg.PackedPipeline(self._measure, self.cap)}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        pipe = st["pipe"]
        if rnd == 0 and mem.get("handled") and view.neighbors:
            for (v, i) in sorted(mem["handled"]):
                counts: dict[int, int] = {}
                for _ in range(self.p_informed):
                    y = view.neighbors[rng.randrange(len(view.neighbors))]
                    counts[y] = counts.get(y, 0) + 1
                for y, m_y in sorted(counts.items()):
                    pipe.push(y, ("icnt", v, i, m_y))
        for frm, msg in inbox:
            if msg[0] == "icnt":
                _, v, i, m_y = msg
                mem["route_h"][(v, i)] = frm
                for _ in range(m_y):
                    z = view.neighbors[rng.randrange(len(view.neighbors))]
                    pipe.push(z, ("inf", v, i))
            elif msg[0] == "inf":
                mem["informed"].setdefault((msg[1], msg[2]), frm)
        outbox: dict[int, list] = {}
        busy = pipe.drain(outbox)
        return outbox, (None if busy or pipe.pending() else IDLE)


class _ForwardColors(NodeProgram):
    """Colored nodes launch random 2-hop walks carrying their color toward
    each live d2-neighbor; walks landing on an informed node get relayed to
    the right handler."""

    def __init__(self, walks: int, z: int, delta: int, n: int, bandwidth: int):
        self.walks = walks
        self.z = z
        self.delta = delta
        self.zbits = cg.bits_for(z)
        self.vocab = Vocab(
            {
                "cf": (cg.ID, cg.COLOR),
                "cf2": (cg.ID, cg.COLOR),
                "c2h": (cg.ID, cg.COLOR),
                "c2h2": (cg.ID, cg.COLOR),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth

    def setup(self, view, memory):
        memory.setdefault("handler_colors", {})
        return {"mem": memory, "pipe": cg.PackedPipeline(self._measure, self.cap)}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        pipe = st["pipe"]
        if rnd == 0 and mem["color"] is not None and view.neighbors:
            c = mem["color"]
            for v in sorted(mem.get("live_d2", ())):
                for _ in range(self.walks):
                    y = view.neighbors[rng.randrange(len(view.neighbors))]
                    pipe.push(y, ("cf", v, c))
        for frm, msg in inbox:
            kind = msg[0]
            if kind == "cf":
                z = view.neighbors[rng.randrange(len(view.neighbors))]
                pipe.push(z, ("cf2", msg[1], msg[2]))
            elif kind == "cf2":
                v, c = msg[1], msg[2]
                key = (v, block_of(c, self.delta, self.z))
                inf = mem.get("informed", {}).get(key)
                if inf is not None:
                    pipe.push(inf, ("c2h", v, c))
            elif kind == "c2h":
                v, c = msg[1], msg[2]
                key = (v, block_of(c, self.delta, self.z))
                w = mem.get("route_h", {}).get(key)
                if w is not None:
                    pipe.push(w, ("c2h2", v, c))
            elif kind == "c2h2":
                v, c = msg[1], msg[2]
                key = (v, block_of(c, self.delta, self.z))
                if key in mem.get("handled", {}):
                    mem["handler_colors"].setdefault(key, set()).add(c)
        outbox: dict[int, list] = {}
        busy = pipe.drain(outbox)
        return outbox, (None if busy or pipe.pending() else IDLE)


class _ReportMissing(NodeProgram):
    """Handlers pipeline the colors missing from their block back to the
    live node through the recorded relay."""

    def __init__(self, z: int, delta: int, n: int, bandwidth: int):
        self.z = z
        self.delta = delta
        self.zbits = cg.bits_for(z)
        self.vocab = Vocab(
            {
                "tm": (cg.ID, cg.UINT(self.zbits), cg.COLORLIST()),
                "tme": (cg.ID, cg.UINT(self.zbits)),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth
        color_bits = cg.bits_for(delta * delta + 1)
        self.chunk = max(1, (bandwidth - 32) // color_bits)

    def setup(self, view, memory):
        if memory["color"] is None:
            memory["t_missing"] = {}
            memory["t_reported"] = set()
        return {"mem": memory, "pipe": cg.PackedPipeline(self._measure, self.cap)}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        pipe = st["pipe"]
        if rnd == 0 and mem.get("handled"):
            got = mem.get("handler_colors", {})
            for (v, i), relay in sorted(mem["handled"].items()):
                missing = [
                    c for c in block_range(i, self.delta, self.z)
                    if c not in got.get((v, i), ())
                ]
                for lo in range(0, len(missing), self.chunk):
                    pipe.push(relay, ("tm", v, i, tuple(missing[lo : lo + self.chunk])))
                pipe.push(relay, ("tme", v, i))
        for frm, msg in inbox:
            v = msg[1]
            if v == view.node:
                if msg[0] == "tm":
                    mem["t_missing"].setdefault(msg[2], set()).update(msg[3])
                else:
                    mem["t_missing"].setdefault(msg[2], set())
                    mem["t_reported"].add(msg[2])
            else:
                pipe.push(v, msg)
        outbox: dict[int, list] = {}
        busy = pipe.drain(outbox)
        return outbox, (None if busy or pipe.pending() else IDLE)


class _CrossCheck(NodeProgram):
    """Live nodes verify their candidate-missing colors against immediate
    neighbors' views, removing every color actually used within distance 2."""

    def __init__(self, z: int, delta: int, n: int, bandwidth: int):
        self.z = z
        self.delta = delta
        self.palette = delta * delta + 1
        self.vocab = Vocab(
            {
                "tq": (cg.COLORLIST(),),
                "tqe": (),
                "ta": (cg.COLORLIST(),),
                "tae": (),
            }
        )
        self._measure = self.vocab.compile(n, delta)
        self.cap = bandwidth
        color_bits = cg.bits_for(delta * delta + 1)
        self.chunk = max(1, (bandwidth - 16) // color_bits)

    def _candidate_missing(self, mem) -> set[int]:
        out: set[int] = set()
        blocks = mem.get("handler_blocks", {})
        missing = mem.get("t_missing", {})
        reported = mem.get("t_reported", set())
        for i in range(self.z):
            if i in blocks and i in reported:
                out.update(missing.get(i, ()))
            else:
                out.update(block_range(i, self.delta, self.z))
        return out

    def setup(self, view, memory):
        return {
            "mem": memory,
            "pipe": cg.PackedPipeline(self._measure, self.cap),
            "tv": None,
            "used": set(),
            "acks": 0,
            "asked": {},
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        pipe = st["pipe"]
        live = mem["color"] is None
        if rnd == 0 and live:
            tv = sorted(self._candidate_missing(mem))
            st["tv"] = set(tv)
            if not view.neighbors:
                mem["palette"] = tv
                return {}, HALT
            for nbr in view.neighbors:
                for lo in range(0, len(tv), self.chunk):
                    pipe.push(nbr, ("tq", tuple(tv[lo : lo + self.chunk])))
                pipe.push(nbr, ("tqe",))
        for frm, msg in inbox:
            kind = msg[0]
            if kind == "tq":
                st["asked"].setdefault(frm, []).extend(msg[1])
            elif kind == "tqe":
                asked = st["asked"].pop(frm, [])
                held = set(mem["nbr_colors"].values())
                if mem["color"] is not None:
                    held.add(mem["color"])
                used = [c for c in asked if c in held]
                for lo in range(0, len(used), self.chunk):
                    pipe.push(frm, ("ta", tuple(used[lo : lo + self.chunk])))
                pipe.push(frm, ("tae",))
            elif kind == "ta":
                st["used"].update(msg[1])
            elif kind == "tae":
                st["acks"] += 1
        outbox: dict[int, list] = {}
        busy = pipe.drain(outbox)
        if live and st["tv"] is not None and st["acks"] >= len(view.neighbors) and not pipe.pending():
            direct = set(mem["nbr_colors"].values())
            mem["palette"] = sorted(st["tv"] - st["used"] - direct)
            return outbox, HALT
        return outbox, (None if busy or pipe.pending() else IDLE)


def learn_palette(runner: cg.PhaseRunner, profile: Profile):
    """Live nodes end up with mem['palette'] = exact remaining palette."""
    g = runner.graph
    n, delta = g.n, g.delta
    bw = runner.cfg.bandwidth_bits(n)
    label = "learn_palette"
    if profile.use_flooded_palette(n, delta):
        runner.run(_FloodPalette(n, delta, bw), label)
        return
    runner.run(_LiveFlood(n, delta, bw), label)
    live_in_h = [
        v for v in range(n)
        if runner.memories[v]["color"] is None and runner.memories[v].get("in_h")
    ]
    z = profile.handler_blocks(delta)
    sampler = HNeighborSampler(
        live_in_h, z, n, delta, profile.sampler_filter_bits(n, delta)
    )
    runner.run(sampler, label, budget=sampler.budget())
    runner.run(_AssignHandlers(z, n), label, budget=6)
    p_informed = profile.handler_informed(n, delta)
    runner.run(_InformSets(p_informed, z, n, delta, bw), label)
    walks = profile.forward_walks(n, delta, p_informed)
    runner.run(_ForwardColors(walks, z, delta, n, bw), label)
    runner.run(_ReportMissing(z, delta, n, bw), label)
    runner.run(_CrossCheck(z, delta, n, bw), label)


class _FinishColoring(NodeProgram):
    """Coin-flip tries from the known palette with two-hop color notices.

    Even rounds: decision for the previous attempt, then (coin permitting,
    no busy neighbor) a fresh random try from the remaining palette. Odd
    rounds: conflict reports. Adoption notices propagate two hops through
    per-node forward queues; a backlog raises a busy flag that quiets the
    neighborhood until it drains.
    """

    def __init__(self, n: int, delta: int, bandwidth: int):
        self.vocab = Vocab(
            {
                "try": (cg.COLOR,),
                "rep": (cg.BIT,),
                "adopt": (cg.COLOR,),
                "adopt2": (cg.COLORLIST(),),
                "busy": (cg.BIT,),
            }
        )
        color_bits = cg.bits_for(delta * delta + 1)
        self.chunk = max(1, (bandwidth - 8) // color_bits)

    def setup(self, view, memory):
        return {
            "mem": memory,
            "cand": None,
            "self_clash": False,
            "fq": [],
            "busy_sent": False,
            "busy_nbrs": set(),
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        live = mem["color"] is None
        counts: dict[int, int] = {}
        tries = []
        reports = []
        for frm, msg in inbox:
            kind = msg[0]
            if kind == "adopt":
                mem["nbr_colors"][frm] = msg[1]
                st["fq"].append(msg[1])
                if live and mem.get("palette") and msg[1] in mem["palette"]:
                    mem["palette"].remove(msg[1])
            elif kind == "adopt2":
                if live and mem.get("palette"):
                    pal = set(mem["palette"])
                    pal.difference_update(msg[1])
                    mem["palette"] = sorted(pal)
            elif kind == "busy":
                if msg[1]:
                    st["busy_nbrs"].add(frm)
                else:
                    st["busy_nbrs"].discard(frm)
            elif kind == "try":
                tries.append((frm, msg[1]))
                counts[msg[1]] = counts.get(msg[1], 0) + 1
            elif kind == "rep":
                reports.append(msg[1])
        outbox: dict[int, list] = {}
        held = set(mem["nbr_colors"].values())
        if rnd % 2 == 1:
            own_cand = st["cand"] if live else None
            if own_cand is not None:
                counts[own_cand] = counts.get(own_cand, 0) + 1
                if counts[own_cand] >= 2 or own_cand in held:
                    st["self_clash"] = True
            for frm, cand in tries:
                bit = 1 if _conflict_for(cand, counts, held, mem["color"]) else 0
                outbox.setdefault(frm, []).append(("rep", bit))
        else:
            if live and st["cand"] is not None:
                conflict = st["self_clash"] or any(reports)
                if not conflict:
                    mem["color"] = st["cand"]
                    live = False
                    if mem.get("palette") and st["cand"] in mem["palette"]:
                        mem["palette"].remove(st["cand"])
                    for nbr in view.neighbors:
                        outbox.setdefault(nbr, []).append(("adopt", mem["color"]))
                st["cand"] = None
            if live and not st["busy_nbrs"] and not st["fq"]:
                if not view.neighbors:
                    mem["color"] = mem["palette"][0]
                    return outbox, IDLE
                if rng.random() < 0.5 and mem.get("palette"):
                    cand = mem["palette"][rng.randrange(len(mem["palette"]))]
                    st["cand"] = cand
                    st["self_clash"] = cand in held
                    for nbr in view.neighbors:
                        outbox.setdefault(nbr, []).append(("try", cand))
        # drain the two-hop notification queue, with busy backpressure
        if st["fq"]:
            batch = tuple(st["fq"][: self.chunk])
            del st["fq"][: self.chunk]
            for nbr in view.neighbors:
                outbox.setdefault(nbr, []).append(("adopt2", batch))
            if st["fq"] and not st["busy_sent"]:
                st["busy_sent"] = True
                for nbr in view.neighbors:
                    outbox.setdefault(nbr, []).append(("busy", 1))
            elif not st["fq"] and st["busy_sent"]:
                st["busy_sent"] = False
                for nbr in view.neighbors:
                    outbox.setdefault(nbr, []).append(("busy", 0))
        elif st["busy_sent"]:
            st["busy_sent"] = False
            for nbr in view.neighbors:
                outbox.setdefault(nbr, []).append(("busy", 0))
        if mem["color"] is None:
            return outbox, rnd + (2 if rnd % 2 == 0 and st["cand"] is None else 1)
        if st["fq"] or st["busy_sent"]:
            return outbox, rnd + 1
        return outbox, IDLE


def finish_coloring(runner: cg.PhaseRunner, profile: Profile, budget: int | None = None):
    g = runner.graph
    bw = runner.cfg.bandwidth_bits(g.n)
    cap = budget if budget is not None else 80 * (math.ceil(math.log2(max(2, g.n))) + 4)
    return runner.run(_FinishColoring(g.n, g.delta, bw), "finish", budget=cap)

from dataclasses import dataclass, field


@dataclass
class RandResult:
    coloring: list
    trace: cg.SimTrace
    delegated: bool = False
    similarity_mode: str | None = None
    live_after: int = 0


def d2_color_rand(
    g: Graph,
    cfg: cg.SimConfig | None = None,
    profile: Profile = DESK,
    *,
    runner: cg.PhaseRunner | None = None,
    fallback_rounds: int = 6,
) -> RandResult:
    """Full randomized pipeline; delegates to the deterministic one when
    delta^2 is below the concentration floor. Output colors lie in
    [0, delta^2] and the partial coloring is proper at every round."""
    cfg = cfg or cg.SimConfig()
    if runner is None:
        runner = cg.PhaseRunner(g, cfg)
    n, delta = g.n, g.delta
    if n == 0:
        return RandResult([], runner.trace)
    if delta == 0:
        for mem in runner.memories:
            mem["color"] = 0
        runner.trace.add_phase("init_trials", 0)
        return RandResult([0] * n, runner.trace)

    if delta * delta < profile.ladder_floor(n):
        from .det_d2 import d2_color_det

        det = d2_color_det(g, cfg, runner=runner)
        for v, mem in enumerate(runner.memories):
            mem["color"] = det.coloring[v]
        return RandResult(det.coloring, runner.trace, delegated=True)

    for mem in runner.memories:
        mem.setdefault("color", None)
        mem.setdefault("nbr_colors", {})

    initial_trials(runner, profile)
    mode = build_similarity(runner, profile)

    tau = profile.c1 * delta * delta
    floor = profile.ladder_floor(n)
    while tau > floor:
        reduce(runner, 2 * tau, tau, profile)
        tau /= 2

    learn_palette(runner, profile)
    finish_coloring(runner, profile)
    # correctness is unconditional; if stragglers outlived the probabilistic
    # budget, relearn exact palettes and finish again
    attempts = 0
    while attempts < fallback_rounds:
        live = sum(1 for mem in runner.memories if mem["color"] is None)
        if live == 0:
            break
        runner.trace.bump("fallback_loops")
        learn_palette(runner, profile)
        finish_coloring(runner, profile)
        attempts += 1
    coloring = [mem["color"] for mem in runner.memories]
    live_after = sum(1 for c in coloring if c is None)
    return RandResult(
        coloring,
        runner.trace,
        delegated=False,
        similarity_mode=mode,
        live_after=live_after,
    )
