"""
Gaussian mechanism on model deltas: norm clipping and seeded noise
"""
import math

import numpy as np

from core.exceptions import FederationError
from core.services.seeding import SplitMix64
from core.services.vectors import l2_norm, vec_scale
from core.types import ParameterVector, freeze


class PrivacyError(FederationError):
    """Base exception for privacy errors"""
    pass


def clip(delta: ParameterVector, bound: float) -> ParameterVector:
    """
    Scale ``delta`` into the L2 ball of radius ``bound``.
    """
    if bound <= 0:
        raise PrivacyError(f"Clip bound must be positive, got {bound}")
    norm = l2_norm(delta)
    if norm <= bound:
        return delta
    return vec_scale(bound / norm, delta)


def gaussian_sigma(clip_bound: float, epsilon: float, delta: float) -> float:
    """C * sqrt(2 ln(1.25/delta)) / epsilon"""
    if clip_bound <= 0:
        raise PrivacyError("clip out of range")
    if epsilon <= 0:
        raise PrivacyError("epsilon out of range")
    if not 0 < delta < 1:
        raise PrivacyError("delta out of range")
    return clip_bound * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def add_noise(delta: ParameterVector, sigma: float, seed: int) -> ParameterVector:
    """
    delta + sigma * z with z drawn by Box-Muller from the SplitMix64 stream
    seeded with ``seed``.
    """
    if sigma < 0:
        raise PrivacyError(f"Noise scale must be non-negative, got {sigma}")
    if sigma == 0:
        return delta
    noise = SplitMix64(seed).normal(delta.shape[0])
    return freeze(delta + np.float64(sigma) * noise)
