"""
Per-client duration estimates and round ETA for cost-aware scheduling
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

from flkernel.config import SPEED_EMA_BETA
from .strategies import AggregationError


@dataclass(frozen=True)
class SpeedEstimate:
    expected_duration_sec: float
    observations: int


@dataclass(frozen=True)
class ClientSpeedStats:
    """Exponential moving average of each client's round duration."""
    estimates: Dict[int, SpeedEstimate] = field(default_factory=dict)
    beta: float = SPEED_EMA_BETA

    def expected_duration(self, client_id: int) -> Optional[float]:
        estimate = self.estimates.get(client_id)
        return None if estimate is None else estimate.expected_duration_sec


def observe_duration(stats: ClientSpeedStats, client_id: int, observed_sec: float) -> ClientSpeedStats:
    """
    First observation sets the estimate; later ones blend with weight beta.
    """
    if observed_sec <= 0:
        raise AggregationError(f"Observed duration must be positive, got {observed_sec}")
    current = stats.estimates.get(client_id)
    if current is None:
        updated = SpeedEstimate(observed_sec, 1)
    else:
        blended = stats.beta * observed_sec + (1.0 - stats.beta) * current.expected_duration_sec
        updated = SpeedEstimate(blended, current.observations + 1)
    return ClientSpeedStats(estimates={**stats.estimates, client_id: updated}, beta=stats.beta)


def estimate_round_eta(stats: ClientSpeedStats, selected: Iterable[int], now: float) -> Optional[float]:
    """
    now + the slowest selected client's expected duration, or None while any
    selected client is still unobserved.
    """
    durations = []
    for client_id in selected:
        expected = stats.expected_duration(client_id)
        if expected is None:
            return None
        durations.append(expected)
    if not durations:
        return None
    return now + max(durations)
