"""Similarity graphs over d2-neighborhoods and random similar-neighbor sampling.

Two d2-neighbors are similar when they share many d2-neighbors: the graphs
H (2/3 threshold) and H-hat (5/6 threshold) are estimated either exactly
(each node gathers full d2-neighbor lists, low-degree regime) or from a
random sample S announced two hops out. Adjacency knowledge lands where the
protocols need it: each node knows its own similarity edges to immediate
neighbors, and every middle node knows the similarity flags for pairs of its
immediate neighbors.

The sampler picks uniformly random H-neighbors via XOR tournaments: the
requester broadcasts a random string, every candidate answers with its own,
and relays forward only their local argmin among candidates passing the
leading-zero filter, which preserves the global argmin exactly.
"""
from __future__ import annotations

import math

from . import congest as cg
from .congest import HALT, IDLE, NodeProgram, Vocab
from .graph import Graph
from .profiles import Profile


def similarity_mode(n: int, delta: int, profile: Profile) -> str:
    return "exact" if delta * delta < profile.c10 * math.log2(max(2, n)) else "sampled"


def similarity_thresholds(n: int, delta: int, profile: Profile) -> tuple[float, float]:
    if similarity_mode(n, delta, profile) == "exact":
        dd = delta * delta
        return (2.0 * dd / 3.0, 5.0 * dd / 6.0)
    base = profile.c10 * math.log2(max(2, n))
    # H_{1-1/k} membership asks for a (1 - 1/(2k)) fraction of the expected
    # sample: k=3 for H, k=6 for H-hat
    return (5.0 / 6.0 * base, 11.0 / 12.0 * base)


class _NeighborListExchange(NodeProgram):
    """Each node learns the full d2-neighbor set (exact mode, round 0 + pipeline)."""

    def __init__(self, n: int, delta: int, bandwidth: int):
        self.vocab = Vocab({"nh": (cg.UINT(cg.bits_for(n)),), "nb": (cg.IDLIST(),)})
        self.chunk = max(1, (bandwidth - 2 * cg.bits_for(n + 1)) // cg.bits_for(n))

    def setup(self, view, memory):
        return {
            "mem": memory,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "ball": set(view.neighbors),
            "queue": cg.chunked(list(view.neighbors), self.chunk),
        }

    def step(self, view, st, inbox, rnd, rng):
        if rnd == 0:
            if not view.neighbors:
                st["mem"]["sim_set"] = frozenset()
                return {}, HALT
            batch = [("nh", len(view.neighbors))]
            return {nbr: batch for nbr in view.neighbors}, None
        for frm, msg in inbox:
            if msg[0] == "nh":
                st["expected"][frm] = msg[1]
            else:
                st["got"][frm] += len(msg[1])
                st["ball"].update(msg[1])
        outbox = {}
        q = st["queue"]
        if q:
            batch = [("nb", q.pop(0))]
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done = len(st["expected"]) == len(view.neighbors) and all(
            st["got"][m] >= st["expected"][m] for m in view.neighbors
        )
        if done and not q:
            st["ball"].discard(view.node)
            st["mem"]["sim_set"] = frozenset(st["ball"])
            return outbox, HALT
        return outbox, (None if q else IDLE)


class _SampleAnnounce(NodeProgram):
    """Sampled mode: nodes join S with rate p and the fact floods two hops."""

    def __init__(self, p: float, n: int, delta: int, bandwidth: int):
        self.p = p
        self.vocab = Vocab(
            {"ins": (), "smh": (cg.UINT(cg.bits_for(n)),), "sm": (cg.IDLIST(),)}
        )
        self.chunk = max(1, (bandwidth - 2 * cg.bits_for(n + 1)) // cg.bits_for(n))

    def setup(self, view, memory):
        return {
            "mem": memory,
            "sv": set(),
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "queue": None,
        }

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd == 0:
            mem["in_s"] = rng.random() < self.p
            if not view.neighbors:
                mem["sim_set"] = frozenset()
                return {}, HALT
            if mem["in_s"]:
                batch = [("ins",)]
                return {nbr: batch for nbr in view.neighbors}, None
            return {}, None
        if rnd == 1:
            s_nbrs = sorted(frm for frm, msg in inbox if msg[0] == "ins")
            st["sv"].update(s_nbrs)
            st["queue"] = [("smh", len(s_nbrs))] + [
                ("sm", chunk) for chunk in cg.chunked(s_nbrs, self.chunk)
            ]
        for frm, msg in inbox:
            if msg[0] == "smh":
                st["expected"][frm] = msg[1]
            elif msg[0] == "sm":
                st["got"][frm] += len(msg[1])
                st["sv"].update(msg[1])
        outbox = {}
        q = st["queue"]
        if q:
            batch = [q.pop(0)]
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done = (
            st["queue"] is not None
            and len(st["expected"]) == len(view.neighbors)
            and all(st["got"][m] >= st["expected"][m] for m in view.neighbors)
        )
        if done and not st["queue"]:
            st["sv"].discard(view.node)
            mem["sim_set"] = frozenset(st["sv"])
            return outbox, HALT
        return outbox, (None if q else IDLE)


class _SetExchangeAndFlags(NodeProgram):
    """Pipelines each node's similarity set to neighbors, then derives flags.

    Sets travel as id chunks and are folded into bitmask form; intersection
    sizes come from popcounts. On completion every node holds: similarity
    edges to immediate neighbors, flags for every pair of its immediate
    neighbors (middle-node knowledge), and a final one-bit exchange telling
    it whether it has any H-neighbor at all.
    """

    def __init__(self, t_h: float, t_hh: float, n: int, delta: int, bandwidth: int):
        self.t_h = t_h
        self.t_hh = t_hh
        self.vocab = Vocab(
            {"seth": (cg.UINT(cg.bits_for(n + 1)),), "se": (cg.IDLIST(),), "hin": (cg.BIT,)}
        )
        self.chunk = max(1, (bandwidth - 2 * cg.bits_for(n + 1)) // cg.bits_for(n))

    def setup(self, view, memory):
        return {
            "mem": memory,
            "expected": {},
            "got": dict.fromkeys(view.neighbors, 0),
            "masks": dict.fromkeys(view.neighbors, 0),
            "queue": None,
            "flags_done": False,
            "hin_sent": False,
            "hin_got": 0,
            "hin_any": False,
        }

    def _derive_flags(self, view, st):
        mem = st["mem"]
        own_mask = 0
        for w in mem["sim_set"]:
            own_mask |= 1 << w
        masks = st["masks"]
        mem["s_of"] = dict(masks)
        h_edge, hh_edge = {}, {}
        for m in view.neighbors:
            inter = (own_mask & masks[m]).bit_count()
            h_edge[m] = inter >= self.t_h
            hh_edge[m] = inter >= self.t_hh
        h_mid, hh_mid = set(), set()
        nbrs = view.neighbors
        for i in range(len(nbrs)):
            mi = masks[nbrs[i]]
            for j in range(i + 1, len(nbrs)):
                inter = (mi & masks[nbrs[j]]).bit_count()
                if inter >= self.t_h:
                    h_mid.add((nbrs[i], nbrs[j]))
                    if inter >= self.t_hh:
                        hh_mid.add((nbrs[i], nbrs[j]))
        mem["h_edge"] = h_edge
        mem["hh_edge"] = hh_edge
        mem["h_mid"] = h_mid
        mem["hh_mid"] = hh_mid
        st["flags_done"] = True

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        if rnd == 0:
            if not view.neighbors:
                mem["s_of"] = {}
                mem["h_edge"] = {}
                mem["hh_edge"] = {}
                mem["h_mid"] = set()
                mem["hh_mid"] = set()
                mem["in_h"] = False
                return {}, HALT
            items = sorted(mem["sim_set"])
            st["queue"] = [("seth", len(items))] + [
                ("se", chunk) for chunk in cg.chunked(items, self.chunk)
            ]
        outbox = {}
        for frm, msg in inbox:
            if msg[0] == "seth":
                st["expected"][frm] = msg[1]
            elif msg[0] == "se":
                st["got"][frm] += len(msg[1])
                m = st["masks"][frm]
                for w in msg[1]:
                    m |= 1 << w
                st["masks"][frm] = m
            elif msg[0] == "hin":
                st["hin_got"] += 1
                st["hin_any"] = st["hin_any"] or bool(msg[1])
        q = st["queue"]
        if q:
            batch = [q.pop(0)]
            for nbr in view.neighbors:
                outbox[nbr] = batch
        done_recv = len(st["expected"]) == len(view.neighbors) and all(
            st["got"][m] >= st["expected"][m] for m in view.neighbors
        )
        if done_recv and not st["queue"] and not st["flags_done"]:
            self._derive_flags(view, st)
            # tell each neighbor whether it has an H-partner two hops away via us
            h_edge = st["mem"]["h_edge"]
            mid_members = {a for pair in st["mem"]["h_mid"] for a in pair}
            for m in view.neighbors:
                any_h = h_edge[m] or m in mid_members
                outbox.setdefault(m, []).append(("hin", 1 if any_h else 0))
            st["hin_sent"] = True
        if st["hin_sent"] and st["hin_got"] >= len(view.neighbors):
            mem["in_h"] = st["hin_any"] or any(mem["h_edge"].values())
            return outbox, HALT
        return outbox, (None if st["queue"] else IDLE)


def build_similarity(runner: cg.PhaseRunner, profile: Profile) -> str:
    """Runs the similarity construction; returns the mode used."""
    g = runner.graph
    n, delta = g.n, g.delta
    bw = runner.cfg.bandwidth_bits(n)
    mode = similarity_mode(n, delta, profile)
    if mode == "exact":
        runner.run(_NeighborListExchange(n, delta, bw), "similarity")
    else:
        p = profile.sample_rate(n, delta)
        runner.run(_SampleAnnounce(p, n, delta, bw), "similarity")
    t_h, t_hh = similarity_thresholds(n, delta, profile)
    runner.run(_SetExchangeAndFlags(t_h, t_hh, n, delta, bw), "similarity")
    return mode


def xor_string_bits(n: int) -> int:
    return 4 * cg.bits_for(n)


class HSampleMixin:
    """Relay-side XOR tournament shared by the sampler program and reduce.

    Message kinds the host vocab must register:
      samq (bits): requester's random string b_u (requester = sender)
      ping (): relay asks its neighborhood for strings
      pong (bits): candidate's per-repetition string r_w
      samr (id, bits): relay's filtered argmin candidate (w, r_w)

    The relay forwards only its local argmin among candidates whose XOR with
    b_u passes the leading-zero filter; since leading zeros order below
    everything else, the requester's fold over relay minima equals the
    argmin over all passing candidates.
    """

    def sam_collect(self, st, inbox):
        for frm, msg in inbox:
            if msg[0] == "samq":
                st.setdefault("sam_reqs", []).append((frm, msg[1]))

    def sam_ping(self, view, st, outbox) -> bool:
        if st.get("sam_reqs"):
            for nbr in view.neighbors:
                outbox.setdefault(nbr, []).append(("ping",))
            st["sam_pinged"] = True
            return True
        return False

    def sam_own_string(self, st, rng, rbits: int, rep: int) -> int:
        if st.get("sam_r_rep") != rep:
            st["sam_r_rep"] = rep
            st["sam_r"] = rng.getrandbits(rbits)
        return st["sam_r"]

    def sam_pong(self, view, st, inbox, rng, outbox, rbits: int, rep: int):
        pingers = [frm for frm, msg in inbox if msg[0] == "ping"]
        if pingers:
            r = self.sam_own_string(st, rng, rbits, rep)
            for x in pingers:
                outbox.setdefault(x, []).append(("pong", r))

    def sam_reply(self, view, st, inbox, rng, outbox, mem, filt_bits: int, rbits: int, rep: int):
        if not st.get("sam_pinged"):
            return
        r_by_w = {frm: msg[1] for frm, msg in inbox if msg[0] == "pong"}
        r_by_w[view.node] = self.sam_own_string(st, rng, rbits, rep)
        h_mid = mem["h_mid"]
        h_edge = mem["h_edge"]
        me = view.node
        for u, b_u in st.get("sam_reqs", ()):
            best = None
            for w, r in r_by_w.items():
                if w == u:
                    continue
                if w == me:
                    if not h_edge.get(u, False):
                        continue
                else:
                    a, b = (u, w) if u < w else (w, u)
                    if (a, b) not in h_mid:
                        continue
                x = b_u ^ r
                if filt_bits > 0 and (x >> (rbits - filt_bits)) != 0:
                    continue
                key = (x, w)
                if best is None or key < best:
                    best = key
            if best is not None:
                outbox.setdefault(u, []).append(("samr", best[1], r_by_w[best[1]]))
        st["sam_reqs"] = []
        st["sam_pinged"] = False


class HNeighborSampler(NodeProgram, HSampleMixin):
    """Draws up to `count` independent uniform H-neighbors per requester.

    One repetition spans 4 rounds: request broadcast, relay ping, candidate
    pong, relay argmin reply; the requester folds replies at the next
    repetition boundary. Repetitions where nothing passed the filter are
    redrawn (counted), up to a retry budget.
    """

    def __init__(self, requesters, count: int, n: int, delta: int, filt_bits: int, retry_slack: int = 8):
        self.requesters = set(requesters)
        self.count = count
        self.rbits = xor_string_bits(n)
        self.filt = filt_bits
        self.max_reps = count + retry_slack
        self.vocab = Vocab(
            {
                "samq": (cg.UINT(self.rbits),),
                "ping": (),
                "pong": (cg.UINT(self.rbits),),
                "samr": (cg.ID, cg.UINT(self.rbits)),
            }
        )

    def budget(self) -> int:
        return 4 * self.max_reps + 5

    def setup(self, view, memory):
        if view.node in self.requesters:
            memory["h_samples"] = []
            memory["h_sample_fails"] = 0
        return {"mem": memory, "b": None, "reps": 0}

    def step(self, view, st, inbox, rnd, rng):
        mem = st["mem"]
        outbox = {}
        phase = rnd % 4
        rep = rnd // 4
        if phase == 0 and view.node in self.requesters:
            if st["b"] is not None:
                best = None
                for frm, msg in inbox:
                    if msg[0] == "samr":
                        key = (msg[2] ^ st["b"], msg[1], frm)
                        if best is None or key < best:
                            best = key
                if best is not None:
                    mem["h_samples"].append((best[1], best[2]))
                else:
                    mem["h_sample_fails"] += 1
                st["b"] = None
            if len(mem["h_samples"]) >= self.count or st["reps"] >= self.max_reps:
                return outbox, IDLE
            st["reps"] += 1
            st["b"] = rng.getrandbits(self.rbits)
            for nbr in view.neighbors:
                outbox.setdefault(nbr, []).append(("samq", st["b"]))
            return outbox, rnd + 4
        if phase == 1:
            self.sam_collect(st, inbox)
            pinged = self.sam_ping(view, st, outbox)
            return outbox, (rnd + 2 if pinged else IDLE)
        if phase == 2:
            self.sam_pong(view, st, inbox, rng, outbox, self.rbits, rep)
            return outbox, (rnd + 1 if st.get("sam_pinged") else IDLE)
        if phase == 3:
            self.sam_reply(view, st, inbox, rng, outbox, mem, self.filt, self.rbits, rep)
            return outbox, IDLE
        return outbox, IDLE


def sample_random_h_neighbors(
    runner: cg.PhaseRunner, node: int, count: int, profile: Profile, label: str = "similarity"
) -> list[tuple[int, int]]:
    """Standalone draw of `count` uniform H-neighbors of `node` (with routes)."""
    g = runner.graph
    if not runner.memories[node].get("in_h"):
        raise ValueError(f"node {node} has no similar neighbor to sample")
    prog = HNeighborSampler(
        [node], count, g.n, g.delta, profile.sampler_filter_bits(g.n, g.delta)
    )
    runner.run(prog, label, budget=prog.budget())
    return list(runner.memories[node]["h_samples"])
