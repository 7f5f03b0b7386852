"""
Shared domain values: parameter vectors, local updates and round state
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .exceptions import DimensionMismatchError, FederationError

# A model is a flat read-only float64 numpy array.
ParameterVector = np.ndarray
# Masked payloads are uint64 residues modulo 2^64.
ResidueVector = np.ndarray


class InvalidUpdateError(FederationError):
    """Exception for local updates that break their invariants"""
    pass


def as_parameter_vector(values, *, allow_empty: bool = False) -> ParameterVector:
    """
    Copy ``values`` into a read-only float64 vector and check it is finite.
    """
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.size == 0 and not allow_empty:
        raise DimensionMismatchError("Parameter vector must have dim > 0")
    if not np.all(np.isfinite(vector)):
        raise FederationError("Parameter vector contains NaN or Inf")
    vector.setflags(write=False)
    return vector


def freeze(vector: np.ndarray) -> np.ndarray:
    """Mark an array this module owns as read-only and return it."""
    vector.setflags(write=False)
    return vector


def require_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionMismatchError(
            f"Dimension mismatch: {x.shape[0]} != {y.shape[0]}"
        )


@dataclass(frozen=True)
class LocalUpdate:
    """One client's product for one round."""
    client_id: int
    round: int
    sample_count: int
    payload: np.ndarray
    masked: bool = False
    train_loss: float = 0.0
    wall_time_sec: float = 0.0
    metrics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidUpdateError("sample_count must be >= 1")
        if self.client_id < 0 or self.round < 0:
            raise InvalidUpdateError("client_id and round must be non-negative")
        if self.wall_time_sec < 0:
            raise InvalidUpdateError("wall_time_sec must be non-negative")
        expected = np.uint64 if self.masked else np.float64
        if self.payload.dtype != expected:
            raise InvalidUpdateError(
                f"payload dtype {self.payload.dtype} does not match masked={self.masked}"
            )
        object.__setattr__(self, "metrics", MappingProxyType(dict(self.metrics)))

    @property
    def dim(self) -> int:
        return int(self.payload.shape[0])


@dataclass
class RoundState:
    """
    Server-side state of one synchronous round. Owned by the single writer.
    """
    round: int
    selected: Tuple[int, ...]
    global_params: ParameterVector
    round_start: float
    round_eta: Optional[float] = None
    attempt: int = 0
    received: Dict[int, LocalUpdate] = field(default_factory=dict)

    @property
    def outstanding(self) -> Tuple[int, ...]:
        return tuple(cid for cid in self.selected if cid not in self.received)

    @property
    def complete(self) -> bool:
        return not self.outstanding
