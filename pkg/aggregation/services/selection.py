"""
Seeded per-round client selection
"""
import math
from typing import Tuple

from core.services.seeding import Domain, SplitMix64, domain_seed, stream_seed


def selection_size(m: int, fraction: float) -> int:
    return max(1, math.ceil(fraction * m))


def select_clients(m: int, fraction: float, round_index: int, seed: int, attempt: int = 0) -> Tuple[int, ...]:
    """
    Sorted sample of max(1, ceil(f*M)) ids from [0, M) by a seeded
    Fisher-Yates shuffle. ``attempt`` draws a fresh sample for a retried round.
    """
    size = selection_size(m, fraction)
    if size >= m:
        return tuple(range(m))
    rng = SplitMix64(domain_seed(stream_seed(seed, m, round_index), Domain.SELECTION, attempt))
    return tuple(sorted(rng.shuffle(range(m))[:size]))
