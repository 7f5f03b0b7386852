"""
Immutable experiment configuration shared verbatim by every run mode
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

PerClient = Union[float, Tuple[float, ...]]


class RunMode(str, Enum):
    SIMULATE_SERIAL = "simulate-serial"
    SIMULATE_PARALLEL = "simulate-parallel"
    SERVER = "server"
    CLIENT = "client"


class Aggregator(str, Enum):
    FEDAVG = "fedavg"
    ASYNC = "async"


class PartitionScheme(str, Enum):
    IID = "iid"
    DIRICHLET = "dirichlet"
    SHARDS = "shards"


class TaskKind(str, Enum):
    LOGREG = "logreg"
    MLP = "mlp"


@dataclass(frozen=True)
class DPConfig:
    enabled: bool = False
    clip: float = 1.0
    epsilon: float = 1.0
    delta: float = 1e-5


@dataclass(frozen=True)
class SecAggConfig:
    enabled: bool = False
    fixed_point_scale: int = 1 << 20


@dataclass(frozen=True)
class PartitionConfig:
    scheme: PartitionScheme = PartitionScheme.IID
    dirichlet_alpha: float = 0.5
    shards_per_client: int = 2


@dataclass(frozen=True)
class TaskConfig:
    kind: TaskKind = TaskKind.LOGREG
    n_per_class: int = 100
    n_classes: int = 2
    feature_dim: int = 2
    class_sep: float = 4.0
    hidden_units: int = 8

    @property
    def total_samples(self) -> int:
        return self.n_per_class * self.n_classes


@dataclass(frozen=True)
class CommConfig:
    host: str = "127.0.0.1"
    port: int = 7070
    auth_token: str = ""
    serialize_inproc: bool = False


@dataclass(frozen=True)
class TimingConfig:
    round_timeout_sec: Optional[float] = None
    quorum: Union[int, str] = "all"
    speed_ema_beta: float = 0.5

    def quorum_for(self, selected_count: int) -> int:
        if self.quorum == "all":
            return selected_count
        return min(int(self.quorum), selected_count)


@dataclass(frozen=True)
class CostConfig:
    price_per_sec: PerClient = 1.0
    base_round_sec: PerClient = 1.0
    per_sample_sec: float = 0.0
    spin_up_time_sec: float = 0.0
    shutdown_threshold_sec: float = 0.0

    @staticmethod
    def _for(value: PerClient, client_id: int) -> float:
        if isinstance(value, tuple):
            return value[client_id]
        return value

    def price_for(self, client_id: int) -> float:
        return self._for(self.price_per_sec, client_id)

    def base_round_for(self, client_id: int) -> float:
        return self._for(self.base_round_sec, client_id)

    def duration_for(self, client_id: int, sample_count: int) -> float:
        """Simulated training time of one client round."""
        return self.base_round_for(client_id) + self.per_sample_sec * sample_count


@dataclass(frozen=True)
class HooksConfig:
    eval_local: bool = True
    eval_global: bool = True
    cost_shutdown: bool = False
    strict: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Validated experiment definition. Build it with ``validate_config``.
    """
    seed: int
    rounds: int
    clients: int
    client_fraction: float
    local_epochs: int
    batch_size: int
    learning_rate: float
    prox_mu: float
    aggregator: Aggregator
    async_alpha: float
    staleness_exponent: float
    async_budget: int
    dp: DPConfig
    secagg: SecAggConfig
    partition: PartitionConfig
    task: TaskConfig
    comm: CommConfig
    timing: TimingConfig
    cost: CostConfig
    hooks: HooksConfig
    mode: RunMode = RunMode.SIMULATE_SERIAL

    @property
    def selected_count(self) -> int:
        return max(1, math.ceil(self.client_fraction * self.clients))

    def with_mode(self, mode: RunMode) -> "ExperimentConfig":
        return replace(self, mode=RunMode(mode))

    def to_document(self) -> Dict[str, Any]:
        """
        Plain JSON-ready form with every default resolved. ``mode`` is left
        out: it selects how a run executes, not what it computes.
        """
        document = asdict(self)
        document.pop("mode")
        return _plain(document)

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_document())

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def canonical_json(document: Any) -> bytes:
    """Sorted keys, no whitespace, shortest round-trip floats, UTF-8."""
    return json.dumps(
        document,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")
