"""
Deterministic seeding built on SplitMix64.

Every stochastic step in the kernel draws from a SplitMix64 stream whose seed
is derived from the experiment seed, so a run is reproducible in every mode.
"""
import math
from enum import IntEnum
from typing import List, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GAMMA = np.uint64(GOLDEN_GAMMA)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)
_SHIFT_30 = np.uint64(30)
_SHIFT_27 = np.uint64(27)
_SHIFT_31 = np.uint64(31)
_SHIFT_11 = np.uint64(11)


class Domain(IntEnum):
    """Tags that separate independent uses of one (client, round) seed"""
    DATA = 0x01
    PARTITION = 0x02
    SHUFFLE = 0x03
    NOISE = 0x04
    SELECTION = 0x05
    SPLIT = 0x06
    INIT = 0x07


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64(x: int) -> int:
    """One SplitMix64 step: the output for state ``x``."""
    return _mix((x + GOLDEN_GAMMA) & MASK64)


def stream_seed(global_seed: int, client_id: int, round_index: int) -> int:
    """Seed of the stream owned by (client, round)."""
    inner = splitmix64((global_seed + client_id * GOLDEN_GAMMA) & MASK64)
    return splitmix64((inner + round_index) & MASK64)


def domain_seed(seed: int, domain: Domain, index: int = 0) -> int:
    """Separate ``seed`` into an independent stream for ``domain``."""
    return splitmix64((splitmix64(seed ^ int(domain)) + index) & MASK64)


class SplitMix64:
    """
    Seeded SplitMix64 generator.

    Scalar and vector draws advance the same state, so mixing them keeps the
    stream reproducible.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * _U64_GAMMA
        z = (z ^ (z >> _SHIFT_30)) * _U64_MIX1
        z = (z ^ (z >> _SHIFT_27)) * _U64_MIX2
        z = z ^ (z >> _SHIFT_31)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, n: Optional[int] = None):
        """Uniform draws in [0, 1) with 53 bits of precision."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0 ** -53
        return (self.u64_array(n) >> _SHIFT_11).astype(np.float64) * 2.0 ** -53

    def normal(self, n: Optional[int] = None):
        """Standard normal draws via Box-Muller, one pair per two uniforms."""
        count = 1 if n is None else n
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        if n is None:
            return float(z[0])
        return z[:count]

    def below(self, bound: int) -> int:
        """Integer in [0, bound)."""
        return self.next_u64() % bound

    def shuffle(self, items: Sequence) -> List:
        """Fisher-Yates shuffle; returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def permutation(self, n: int) -> np.ndarray:
        return np.asarray(self.shuffle(range(n)), dtype=np.int64)

    def gamma(self, shape: float) -> float:
        """Gamma(shape, 1) by Marsaglia-Tsang."""
        if shape < 1.0:
            boost = self.gamma(shape + 1.0)
            u = 1.0 - self.uniform()
            return boost * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = 1.0 - self.uniform()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    def dirichlet(self, alphas: Sequence[float]) -> np.ndarray:
        draws = np.array([self.gamma(a) for a in alphas], dtype=np.float64)
        total = draws.sum()
        if total <= 0.0:
            # every gamma underflowed (tiny alpha): fall back to one hot
            draws = np.zeros(len(alphas), dtype=np.float64)
            draws[self.below(len(alphas))] = 1.0
            return draws
        return draws / total


def stream(seed: int, domain: Domain, index: int = 0) -> SplitMix64:
    """Generator for ``domain`` of ``seed``."""
    return SplitMix64(domain_seed(seed, domain, index))
