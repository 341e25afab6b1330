"""Round-synchronous CONGEST simulator with bit-exact bandwidth accounting.

The kernel executes per-node step functions in lockstep rounds, delivers
messages along graph edges, measures every message against a canonical
encoding, and enforces or audits the per-edge-per-direction cap
B = ceil(beta * log2 n) bits per round.

Round convention: a node's step at round t sees the messages sent at round
t-1 and may send messages that become readable at round t+1. The reported
round count of a segment is the index of its last sending round plus one,
or the declared schedule length for fixed-length protocols (silent rounds
inside a schedule are still CONGEST rounds).

Node programs are pure per-node state machines; purity plus per-node RNG
streams keyed by (seed, node, global round) make runs bit-identical under
any execution order, including threaded execution, and let the kernel
fast-forward through provably silent stretches.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
import struct
from operator import itemgetter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .graph import Graph


class CongestError(Exception):
    pass


class VocabError(CongestError):
    """Payload kind not registered in the message vocabulary."""


class BandwidthViolation(CongestError):
    """Strict-mode abort: (round, edge, bits) of the offending message batch."""

    def __init__(self, round_: int, edge: tuple[int, int], bits: int, cap: int):
        super().__init__(f"round {round_}: edge {edge} carries {bits} bits > cap {cap}")
        self.round = round_
        self.edge = edge
        self.bits = bits
        self.cap = cap


def bits_for(count: int) -> int:
    """Bits needed to address `count` distinct values (at least 1)."""
    if count <= 1:
        return 1
    return (count - 1).bit_length()


# Field specifications for the canonical message encoding. Widths that depend
# on the run (ids, colors) are resolved once per kernel run.
ID = "id"            # ceil(log2 n) bits
COLOR = "color"      # ceil(log2 (delta^2+1)) bits
BIT = "bit"          # 1 bit


def UINT(width: int):
    return ("uint", width)


def IDLIST():
    return ("list", "id")


def COLORLIST():
    return ("list", "color")


def UINTLIST(width: int):
    return ("list", ("uint", width))


class Vocab:
    """Registered message vocabulary: kind name -> field spec tuple.

    A message is a tuple ('kind', field1, ...). Its measured size is the tag
    bits (ceil(log2 #kinds), zero for a single-kind vocabulary) plus field
    bits; list fields carry a count prefix sized for the id space.
    """

    def __init__(self, kinds: dict[str, tuple]):
        self.kinds = dict(kinds)
        self.tag_bits = bits_for(len(self.kinds)) if len(self.kinds) > 1 else 0

    def compile(self, n: int, delta: int):
        id_bits = bits_for(n)
        color_bits = bits_for(delta * delta + 1)
        len_bits = bits_for(n + 1)

        def field_width(spec):
            if spec == ID:
                return id_bits
            if spec == COLOR:
                return color_bits
            if spec == BIT:
                return 1
            if isinstance(spec, tuple) and spec[0] == "uint":
                return spec[1]
            return None  # list field, variable length

        table = {}
        for kind, fields in self.kinds.items():
            fixed = self.tag_bits
            lists = []
            for idx, spec in enumerate(fields):
                w = field_width(spec)
                if w is not None:
                    fixed += w
                else:
                    elem = field_width(spec[1])
                    lists.append((idx + 1, elem))
                    fixed += len_bits
            table[kind] = (fixed, tuple(lists))

        def measure_fn(msg) -> int:
            entry = table.get(msg[0])
            if entry is None:
                raise VocabError(f"unregistered payload kind {msg[0]!r}")
            bits, lists = entry
            for pos, elem in lists:
                bits += elem * len(msg[pos])
            return bits

        return measure_fn


def measure(vocab: Vocab, msg, n: int, delta: int) -> int:
    """One-off measurement of a payload's canonical encoding length."""
    return vocab.compile(n, delta)(msg)


@dataclass
class SimConfig:
    beta: float = 32.0
    seed: int = 0
    max_rounds: int = 5_000_000
    enforcement: str = "audit"      # "audit" records violations, "strict" aborts
    execution: str = "serial"       # "serial" or "threads"
    fast_forward: bool = True

    def bandwidth_bits(self, n: int) -> int:
        return max(1, math.ceil(self.beta * math.log2(max(2, n))))


@dataclass
class PhaseRecord:
    label: str
    rounds: int


@dataclass
class SimTrace:
    rounds_total: int = 0
    phases: list = field(default_factory=list)
    violations: list = field(default_factory=list)   # (round, (u, v), bits)
    round_bits: dict = field(default_factory=dict)   # global round -> max edge bits
    live_counts: dict = field(default_factory=dict)  # global round -> non-halted nodes
    counters: dict = field(default_factory=dict)
    terminations: list = field(default_factory=list)

    @property
    def max_edge_bits(self) -> int:
        return max(self.round_bits.values(), default=0)

    def bump(self, key: str, amount: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + amount

    def add_phase(self, label: str, rounds: int) -> None:
        self.phases.append(PhaseRecord(label, rounds))
        self.rounds_total += rounds

    def phase_rounds(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rec in self.phases:
            out[rec.label] = out.get(rec.label, 0) + rec.rounds
        return out

    def export_csv(self, path: str) -> None:
        """Sparse trace export: one row per round with recorded traffic."""
        with open(path, "w") as fh:
            fh.write("# d2color-trace v1\n")
            fh.write("round,max_edge_bits,live_count,phase_label\n")
            bounds = []
            start = 0
            for rec in self.phases:
                bounds.append((start, start + rec.rounds, rec.label))
                start += rec.rounds
            for rnd in sorted(self.round_bits):
                label = ""
                for lo, hi, lab in bounds:
                    if lo <= rnd < hi:
                        label = lab
                        break
                fh.write(
                    f"{rnd},{self.round_bits[rnd]},{self.live_counts.get(rnd, '')},{label}\n"
                )


HALT = "halt"
IDLE = "idle"   # wake only on message arrival


@dataclass(frozen=True)
class NodeView:
    """What a node program legitimately knows about its environment."""
    node: int
    neighbors: tuple[int, ...]
    n: int
    delta: int
    bandwidth_bits: int


_MASK64 = (1 << 64) - 1


class LazyRng:
    """random.Random derived from (seed, node, round), constructed on first use."""

    __slots__ = ("_key", "_rng")

    def __init__(self, key: tuple[int, int, int]):
        self._key = key
        self._rng = None

    def get(self) -> random.Random:
        if self._rng is None:
            s, v, r = self._key
            digest = hashlib.blake2b(
                struct.pack(">QQQ", s & _MASK64, v & _MASK64, r & _MASK64),
                digest_size=8,
            ).digest()
            self._rng = random.Random(int.from_bytes(digest, "big"))
        return self._rng

    def random(self) -> float:
        return self.get().random()

    def randrange(self, *args) -> int:
        return self.get().randrange(*args)

    def choice(self, seq):
        return self.get().choice(seq)

    def getrandbits(self, k: int) -> int:
        return self.get().getrandbits(k)

    def shuffle(self, seq) -> None:
        self.get().shuffle(seq)


class NodeProgram:
    """Base class for per-node protocols; subclasses override setup/step.

    setup(view, memory) -> state: `memory` is the per-node dict persisting
    across pipeline phases; the returned state is per-phase working state.
    step(view, state, inbox, rnd, rng) -> (outbox, control): outbox maps
    neighbor id -> list of message tuples; control is HALT, IDLE, an int
    round to wake at, or None for "next round". Messages wake a node early.
    """

    vocab: Vocab = Vocab({})

    def setup(self, view: NodeView, memory: dict):
        return None

    def step(self, view: NodeView, state, inbox, rnd: int, rng: LazyRng):
        raise NotImplementedError


@dataclass
class RunOutcome:
    rounds: int                 # last sending round + 1 (communication rounds)
    invocations: int            # step rounds actually executed (>= rounds)
    termination: str            # "halted", "quiescent", "max_rounds"
    carry: dict                 # messages in flight at segment end: node -> [(frm, msg)]


def run(
    graph: Graph,
    program: NodeProgram,
    cfg: SimConfig,
    *,
    memories: list[dict] | None = None,
    trace: SimTrace | None = None,
    label: str = "",
    budget: int | None = None,
    round_offset: int = 0,
    carry_in: dict | None = None,
) -> RunOutcome:
    """Execute one protocol segment until all nodes halt, quiescence, or budget.

    Messages still in flight when the segment ends are returned in `carry`
    and can be fed to the next segment via `carry_in`. `round_offset` keys
    RNG streams and trace rows so chained segments never reuse randomness.
    """
    n = graph.n
    delta = graph.delta
    B = cfg.bandwidth_bits(n)
    measure_fn = program.vocab.compile(n, delta)
    views = [NodeView(v, graph.adjacency[v], n, delta, B) for v in range(n)]
    nbr_sets = [set(a) for a in graph.adjacency]
    if memories is None:
        memories = [{} for _ in range(n)]
    states = [program.setup(views[v], memories[v]) for v in range(n)]

    halted = bytearray(n)
    halted_count = 0
    wake_at: list[int | None] = [0] * n
    wake_heap: list[tuple[int, int]] = [(0, v) for v in range(n)]
    inboxes: dict[int, list] = {}
    if carry_in:
        for v, msgs in carry_in.items():
            inboxes.setdefault(v, []).extend(msgs)
    seed = cfg.seed
    strict = cfg.enforcement == "strict"
    pool = ThreadPoolExecutor(max_workers=4) if cfg.execution == "threads" else None
    cap = cfg.max_rounds if budget is None else min(budget, cfg.max_rounds)

    rnd = 0
    last_send = -1
    termination = "max_rounds"
    try:
        while rnd < cap:
            if halted_count == n:
                termination = "halted"
                break
            to_call = set(inboxes)
            while wake_heap and wake_heap[0][0] <= rnd:
                r0, v0 = heapq.heappop(wake_heap)
                if not halted[v0] and wake_at[v0] == r0:
                    to_call.add(v0)
            to_call = sorted(v for v in to_call if not halted[v])
            if not to_call:
                future = None
                while wake_heap:
                    r0, v0 = wake_heap[0]
                    if halted[v0] or wake_at[v0] != r0:
                        heapq.heappop(wake_heap)
                        continue
                    future = r0
                    break
                if future is None:
                    termination = "quiescent"
                    break
                rnd = min(future, cap) if cfg.fast_forward else rnd + 1
                continue

            rngs = [LazyRng((seed, v, round_offset + rnd)) for v in to_call]

            def call(v, rng):
                inbox = inboxes.get(v)
                if inbox is None:
                    inbox = []
                else:
                    inbox.sort(key=itemgetter(0))
                return program.step(views[v], states[v], inbox, rnd, rng)

            if pool is not None:
                results = list(pool.map(call, to_call, rngs))
            else:
                results = [call(v, rng) for v, rng in zip(to_call, rngs)]
            if trace is not None:
                used = sum(1 for rng in rngs if rng._rng is not None)
                if used:
                    trace.bump("rng_streams_used", used)

            new_inboxes: dict[int, list] = {}
            max_bits = 0
            sent = False
            for v, (outbox, control) in zip(to_call, results):
                if outbox:
                    adj = nbr_sets[v]
                    batch_bits: dict[int, int] = {}
                    for nbr in sorted(outbox):
                        msgs = outbox[nbr]
                        if not msgs:
                            continue
                        if nbr not in adj:
                            raise CongestError(
                                f"node {v} sent to non-neighbor {nbr} at round {rnd}"
                            )
                        sent = True
                        # broadcast batches reuse one list object; measure once
                        bits = batch_bits.get(id(msgs))
                        if bits is None:
                            bits = 0
                            for m in msgs:
                                bits += measure_fn(m)
                            batch_bits[id(msgs)] = bits
                        if bits > max_bits:
                            max_bits = bits
                        if bits > B:
                            rec = (round_offset + rnd, (v, nbr), bits)
                            if trace is not None:
                                trace.violations.append(rec)
                            if strict:
                                raise BandwidthViolation(rec[0], (v, nbr), bits, B)
                        box = new_inboxes.get(nbr)
                        if box is None:
                            box = new_inboxes[nbr] = []
                        for m in msgs:
                            box.append((v, m))
                if control == HALT:
                    if not halted[v]:
                        halted[v] = 1
                        halted_count += 1
                    wake_at[v] = None
                elif control == IDLE:
                    wake_at[v] = None
                else:
                    nxt = rnd + 1 if control is None else max(int(control), rnd + 1)
                    wake_at[v] = nxt
                    heapq.heappush(wake_heap, (nxt, v))
            if sent:
                last_send = rnd
            if trace is not None and (max_bits > 0 or new_inboxes):
                g_rnd = round_offset + rnd
                trace.round_bits[g_rnd] = max_bits
                trace.live_counts[g_rnd] = n - halted_count
            inboxes = new_inboxes
            rnd += 1
        if halted_count == n and termination == "max_rounds":
            termination = "halted"
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
        if trace is not None:
            trace.terminations.append((label, termination))
    return RunOutcome(
        rounds=last_send + 1,
        invocations=rnd,
        termination=termination,
        carry=inboxes,
    )


class PhaseRunner:
    """Chains kernel segments over persistent per-node memories.

    Carries in-flight messages between segments, tracks a global round
    offset so RNG streams stay unique across phases, and records each
    phase's declared round count (fixed schedules count silent rounds).
    """

    def __init__(self, graph: Graph, cfg: SimConfig, trace: SimTrace | None = None):
        self.graph = graph
        self.cfg = cfg
        self.trace = trace if trace is not None else SimTrace()
        self.memories = [{} for _ in range(graph.n)]
        self.offset = 0
        self.carry: dict = {}

    def run(
        self,
        program: NodeProgram,
        label: str,
        *,
        budget: int | None = None,
        declared: int | None = None,
    ) -> RunOutcome:
        outcome = run(
            self.graph,
            program,
            self.cfg,
            memories=self.memories,
            trace=self.trace,
            label=label,
            budget=budget if budget is not None else declared,
            round_offset=self.offset,
            carry_in=self.carry,
        )
        if declared is not None and outcome.invocations > declared:
            raise CongestError(
                f"phase {label!r} overran its declared budget: "
                f"{outcome.invocations} > {declared}"
            )
        rounds = declared if declared is not None else outcome.rounds
        self.trace.add_phase(label, rounds)
        self.offset += max(rounds, outcome.invocations)
        self.carry = outcome.carry
        return outcome


def check_forward_path(neighbors, path: tuple[int, ...], pos: int) -> None:
    """Validate that the next hop of a routed query is an actual neighbor.

    `path` lists the full walk; `pos` is the index of the current holder.
    Raises CongestError when the walk would leave the graph.
    """
    if pos + 1 >= len(path):
        raise CongestError(f"routing path {path} exhausted at position {pos}")
    if path[pos + 1] not in neighbors:
        raise CongestError(f"routing path {path}: hop {path[pos + 1]} is not a neighbor")


def route_back(node: int, neighbors, path: tuple[int, ...], pos: int) -> tuple[int, int]:
    """One reverse hop of a path-carrying reply.

    A query from an origin carries its full routing path; replies walk the
    path backwards. Returns (next hop, next pos); raises CongestError when
    the message sits at the wrong node or the hop is not an edge.
    """
    if path[pos] != node:
        raise CongestError(f"routed reply at {node} but path position holds {path[pos]}")
    if pos == 0:
        raise CongestError("routed reply is already at its origin")
    nxt = path[pos - 1]
    if nxt not in neighbors:
        raise CongestError(f"routing path {path}: hop {nxt} is not a neighbor")
    return nxt, pos - 1


class PackedPipeline:
    """Per-edge send queue draining as many whole messages per round as the
    bandwidth cap allows. Messages never split; a single oversized message
    still goes out alone (and gets measured), which is what audit mode sees.
    """

    def __init__(self, measure_fn, cap: int):
        self.measure = measure_fn
        self.cap = cap
        self.queues: dict[int, list] = {}

    def push(self, nbr: int, msg) -> None:
        self.queues.setdefault(nbr, []).append(msg)

    def pending(self) -> bool:
        return any(self.queues.values())

    def drain(self, outbox: dict[int, list]) -> bool:
        busy = False
        for nbr in sorted(self.queues):
            q = self.queues[nbr]
            if not q:
                continue
            batch = []
            bits = 0
            i = 0
            while i < len(q):
                mbits = self.measure(q[i])
                if batch and bits + mbits > self.cap:
                    break
                batch.append(q[i])
                bits += mbits
                i += 1
                if bits >= self.cap:
                    break
            if batch:
                del q[:i]
                outbox.setdefault(nbr, []).extend(batch)
                busy = True
        return busy


def chunked(items, size: int):
    """Split a sequence into tuples of at most `size` elements."""
    out = []
    for lo in range(0, len(items), size):
        out.append(tuple(items[lo : lo + size]))
    return out
