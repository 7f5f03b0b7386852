"""
Simulated clock and cost accounting for virtual client instances
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict

from core.experiment import CostConfig
from .errors import OrchestrationError

logger = logging.getLogger(__name__)


class InstanceState(str, Enum):
    UP = "up"
    DOWN = "down"


@dataclass
class VirtualInstance:
    state: InstanceState = InstanceState.UP
    up_since: float = 0.0
    down_since: float = 0.0
    busy_until: float = 0.0
    cost: float = 0.0
    up_time: float = 0.0
    spin_ups: int = 0
    terminations: int = 0


class SimClock:
    """
    Simulated seconds plus one virtual instance per client. Every instance is
    up from time 0; an up interval costs price_per_sec for its length.
    """

    def __init__(self, cost: CostConfig, clients: int):
        self.cost_config = cost
        self._now = 0.0
        self.instances: Dict[int, VirtualInstance] = {cid: VirtualInstance() for cid in range(clients)}

    def now(self) -> float:
        return self._now

    def advance_to(self, instant: float) -> None:
        if instant < self._now:
            raise OrchestrationError(f"Simulated time cannot go back from {self._now} to {instant}")
        self._now = instant

    def _close_interval(self, client_id: int, instance: VirtualInstance, end: float) -> None:
        length = max(0.0, end - instance.up_since)
        instance.up_time += length
        instance.cost += self.cost_config.price_for(client_id) * length

    def mark_busy(self, client_id: int, until: float) -> None:
        instance = self.instances[client_id]
        instance.busy_until = max(instance.busy_until, until)

    def terminate(self, client_id: int, at: float) -> None:
        instance = self.instances[client_id]
        if instance.state is InstanceState.DOWN:
            return
        self._close_interval(client_id, instance, at)
        instance.state = InstanceState.DOWN
        instance.down_since = at
        instance.terminations += 1
        logger.debug("instance %s down at %.3f", client_id, at)

    def ensure_up(self, client_id: int, round_start: float) -> bool:
        """
        Re-spin a down instance so it is ready at ``round_start``; the spin-up
        interval is charged just before the round. Returns True on a spin-up.
        """
        instance = self.instances[client_id]
        if instance.state is InstanceState.UP:
            return False
        instance.up_since = max(instance.down_since, round_start - self.cost_config.spin_up_time_sec)
        instance.state = InstanceState.UP
        instance.spin_ups += 1
        logger.debug("instance %s spun up from %.3f", client_id, instance.up_since)
        return True

    def is_up(self, client_id: int) -> bool:
        return self.instances[client_id].state is InstanceState.UP

    def finalize(self) -> Dict[int, float]:
        """Close every open interval at the current time; returns cost per client."""
        for client_id, instance in self.instances.items():
            if instance.state is InstanceState.UP:
                self._close_interval(client_id, instance, self._now)
                instance.up_since = self._now
        return self.costs()

    def costs(self) -> Dict[int, float]:
        return {cid: instance.cost for cid, instance in self.instances.items()}

    @property
    def total_cost(self) -> float:
        return sum(self.costs().values())
