"""
Context objects handed to hook callbacks
"""
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional, Protocol, Tuple, Union

from aggregation.services.speed import ClientSpeedStats
from core.types import ParameterVector
from partition.services.datasets import ClientData
from trainer.services.tasks import Task
from .events import HookError
from .metrics_store import MetricsStore

MetadataValue = Union[int, float, str]


class Clock(Protocol):
    def now(self) -> float:
        ...


class WallClock:
    """Seconds since the epoch."""

    def now(self) -> float:
        return time.time()


@dataclass(frozen=True)
class FixedClock:
    """A clock stopped at one instant, e.g. a client's simulated finish time."""
    instant: float

    def now(self) -> float:
        return self.instant


@dataclass(frozen=True)
class ClientInfo:
    """Roster entry: what the server knows about one client's speed."""
    client_id: int
    expected_duration: Optional[float]
    expected_finish: Optional[float]


class ServerContext:
    """
    Server state visible to callbacks. The global model is read-only; metrics
    and metadata are the writable parts.
    """

    def __init__(
        self,
        round_index: int,
        global_model: ParameterVector,
        metrics: Optional[MetricsStore] = None,
        metadata: Optional[Dict[str, MetadataValue]] = None,
        speed_stats: Optional[ClientSpeedStats] = None,
        candidates: Tuple[int, ...] = (),
        clock: Optional[Clock] = None,
    ):
        self.round = round_index
        self._global_model = global_model
        self.metrics = metrics if metrics is not None else MetricsStore()
        self._metadata: Dict[str, MetadataValue] = dict(metadata or {})
        self.speed_stats = speed_stats or ClientSpeedStats()
        self.candidates = tuple(candidates)
        self.selected: Tuple[int, ...] = ()
        self.clock = clock or WallClock()

    @property
    def global_model(self) -> ParameterVector:
        return self._global_model

    @property
    def clients(self) -> Tuple[ClientInfo, ...]:
        """Roster of the clients expected in this round."""
        now = self.clock.now()
        roster = []
        for client_id in self.candidates:
            expected = self.speed_stats.expected_duration(client_id)
            finish = None if expected is None else now + expected
            roster.append(ClientInfo(client_id, expected, finish))
        return tuple(roster)

    def get_metadata(self, key: str, default: Any = None) -> Any:
        return self._metadata.get(key, default)

    def set_metadata(self, key: str, value: MetadataValue) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise HookError(f"Metadata '{key}' must be a number or a string")
        self._metadata[str(key)] = value

    def clear_metadata(self, key: str) -> None:
        self._metadata.pop(key, None)

    @property
    def metadata(self) -> Dict[str, MetadataValue]:
        """Snapshot of the metadata, as shipped with the model."""
        return dict(self._metadata)

    def advance(self, round_index: int, global_model: ParameterVector) -> None:
        self.round = round_index
        self._global_model = global_model


class ClientContext:
    """
    One client's state during a round. ``terminate_self`` is one-way.
    """

    def __init__(
        self,
        client_id: int,
        round_index: int,
        model: ParameterVector,
        data: ClientData,
        task: Task,
        spin_up_time: float = 0.0,
        shutdown_threshold: float = 0.0,
        clock: Optional[Clock] = None,
    ):
        self.id = client_id
        self.round = round_index
        self.model = model
        self.data = data
        self.task = task
        self.spin_up_time = spin_up_time
        self.shutdown_threshold = shutdown_threshold
        self.clock = clock or WallClock()
        self._terminated = False

    @property
    def terminated(self) -> bool:
        return self._terminated

    def terminate_self(self) -> None:
        self._terminated = True
