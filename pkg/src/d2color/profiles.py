"""Constant profiles for the randomized pipeline and the splitting machinery.

The "paper" profile keeps the published constants; they drive success
probabilities to ~0 below n ~ 1e6, so the default "desk" profile substitutes
constants sized for bench-scale runs. Correctness never depends on the
profile (color tries are mutually exclusive by construction); only progress
rates and round counts do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

E = math.e


@dataclass(frozen=True)
class Profile:
    name: str
    c0: float           # initial trial iterations: ceil(c0 * log2 n)
    c1: float           # leeway ladder start: tau0 = c1 * delta^2
    c2: float           # low-degree delegation + ladder floor: c2 * log2 n
    c3: float           # reduce repetitions: ceil(c3 * (phi/tau)^2 * log2 n)
    c10: float          # similarity sampling rate: c10 * log2 n / delta^2
    c11: int            # sampler filter slack
    flood_logmult: float    # palette flooding branch when delta <= mult * log2 n
    learn_paths_mult: float  # color-forwarding walks: ceil(mult*(delta^2/P)*log2 n)
    kwise_k_mult: float      # seed independence for derandomized splitting
    kwise_k_cap: int | None  # cap on k (None = uncapped)
    split_threshold_c: float  # degree floor for recursive splitting

    def trial_iterations(self, n: int) -> int:
        return max(1, math.ceil(self.c0 * math.log2(max(2, n))))

    def ladder_floor(self, n: int) -> float:
        return self.c2 * math.log2(max(2, n))

    def reduce_repetitions(self, phi: float, tau: float, n: int) -> int:
        return max(1, math.ceil(self.c3 * (phi / tau) ** 2 * math.log2(max(2, n))))

    def activation_prob(self, phi: float, tau: float) -> float:
        return min(1.0, tau / (8.0 * phi))

    def query_prob(self, phi: float) -> float:
        if self.name == "paper":
            return 1.0 / (6000.0 * phi)
        return 1.0 / max(8.0, phi)

    def sample_rate(self, n: int, delta: int) -> float:
        return min(1.0, self.c10 * math.log2(max(2, n)) / (delta * delta))

    def sampler_filter_bits(self, n: int, delta: int) -> int:
        loglog = math.ceil(math.log2(max(2.0, math.log2(max(2, n)))))
        return max(0, 2 * math.ceil(math.log2(max(2, delta))) - self.c11 * loglog)

    def use_flooded_palette(self, n: int, delta: int) -> bool:
        return delta <= self.flood_logmult * math.log2(max(2, n))

    def handler_blocks(self, delta: int) -> int:
        return max(1, delta)

    def handler_informed(self, n: int, delta: int) -> int:
        # P = delta * ceil(sqrt(delta * log2 n)), capped by the d2-degree bound
        p = delta * math.ceil(math.sqrt(delta * math.log2(max(2, n))))
        return max(1, min(p, delta * delta))

    def forward_walks(self, n: int, delta: int, informed: int) -> int:
        dd = delta * delta
        return max(1, math.ceil(self.learn_paths_mult * dd / informed * math.log2(max(2, n))))

    def kwise_k(self, n: int) -> int:
        k = max(2, math.ceil(self.kwise_k_mult * math.log2(max(2, n))))
        if self.kwise_k_cap is not None:
            k = min(k, self.kwise_k_cap)
        return k


PAPER = Profile(
    name="paper",
    c0=3 * E * 402 * E**3,   # c0 <= 3e/c1 with c1 = 1/(402 e^3)
    c1=1.0 / (402 * E**3),
    c2=6.0,
    c3=32.0 * 1.2e6,         # 32/c7 with the progress constant c7 = 1/1.2e6
    c10=16.0,
    c11=4,
    flood_logmult=1.0,
    learn_paths_mult=1.0,
    kwise_k_mult=10.0,
    kwise_k_cap=None,
    split_threshold_c=1200.0,
)

DESK = Profile(
    name="desk",
    c0=4.0,
    c1=1.0,
    c2=2.0,
    c3=0.5,
    c10=16.0,
    c11=4,
    flood_logmult=2.0,
    learn_paths_mult=1.0,
    kwise_k_mult=10.0,
    kwise_k_cap=8,
    split_threshold_c=1200.0,
)

PROFILES = {"paper": PAPER, "desk": DESK}
