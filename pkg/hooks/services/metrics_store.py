"""
Metrics keyed scope -> round -> name -> number.

A scope is "server" or a client id; ``store[cid][rnd] = {...}`` writes the
named values for that client and round, overwriting names already present.
Reading an absent key raises ``MetricAbsentError``.
"""
import math
import numbers
from types import MappingProxyType
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

from .events import HookError

SERVER_SCOPE = "server"

Scope = Union[int, str]


class MetricAbsentError(HookError, KeyError):
    """Exception for reads of a metric that was never written"""
    pass


def scope_key(scope: Scope) -> str:
    if scope == SERVER_SCOPE:
        return SERVER_SCOPE
    try:
        client_id = int(scope)
    except (TypeError, ValueError):
        raise HookError(f"Metric scope must be 'server' or a client id, got {scope!r}") from None
    if client_id < 0:
        raise HookError(f"Metric scope must be a non-negative client id, got {client_id}")
    return str(client_id)


def _number(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise HookError(f"Metric '{name}' must be a number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise HookError(f"Metric '{name}' must be finite")
    return value


class ScopeMetrics:
    """View on one scope of a MetricsStore."""

    def __init__(self, store: "MetricsStore", scope: str):
        self._store = store
        self._scope = scope

    def __getitem__(self, round_index: int) -> Mapping[str, float]:
        rounds = self._store._data.get(self._scope, {})
        if round_index not in rounds:
            raise MetricAbsentError(f"No metrics for scope {self._scope} round {round_index}")
        return MappingProxyType(rounds[round_index])

    def __setitem__(self, round_index: int, values: Mapping[str, float]) -> None:
        for name, value in values.items():
            self._store.record(self._scope, round_index, name, value)

    def __contains__(self, round_index: int) -> bool:
        return round_index in self._store._data.get(self._scope, {})


class MetricsStore:
    def __init__(self):
        self._data: Dict[str, Dict[int, Dict[str, float]]] = {}

    def __getitem__(self, scope: Scope) -> ScopeMetrics:
        return ScopeMetrics(self, scope_key(scope))

    def __len__(self) -> int:
        return sum(len(values) for rounds in self._data.values() for values in rounds.values())

    def record(self, scope: Scope, round_index: int, name: str, value) -> None:
        if round_index < 0:
            raise HookError(f"Metric round must be non-negative, got {round_index}")
        rounds = self._data.setdefault(scope_key(scope), {})
        rounds.setdefault(int(round_index), {})[str(name)] = _number(name, value)

    def increment(self, scope: Scope, round_index: int, name: str, amount: float = 1) -> float:
        current = self.get(scope, round_index, name) if self.has(scope, round_index, name) else 0.0
        self.record(scope, round_index, name, current + amount)
        return current + amount

    def merge(self, scope: Scope, round_index: int, values: Mapping[str, float]) -> None:
        for name, value in values.items():
            self.record(scope, round_index, name, value)

    def get(self, scope: Scope, round_index: int, name: str) -> float:
        values = self[scope][round_index]
        if name not in values:
            raise MetricAbsentError(f"No metric '{name}' for scope {scope_key(scope)} round {round_index}")
        return values[name]

    def has(self, scope: Scope, round_index: int, name: str) -> bool:
        return name in self._data.get(scope_key(scope), {}).get(round_index, {})

    def scope_round(self, scope: Scope, round_index: int) -> Dict[str, float]:
        """Copy of one (scope, round) entry; empty when nothing was written."""
        return dict(self._data.get(scope_key(scope), {}).get(round_index, {}))

    def entries(self, round_index: Optional[int] = None) -> Iterator[Tuple[int, str, str, float]]:
        """
        (round, scope, name, value) in round order, server scope first, then
        clients by id, then names in write order.
        """
        rounds = sorted({r for per_scope in self._data.values() for r in per_scope})
        if round_index is not None:
            rounds = [r for r in rounds if r == round_index]
        scopes = sorted(self._data, key=lambda s: (s != SERVER_SCOPE, int(s) if s != SERVER_SCOPE else -1))
        for r in rounds:
            for scope in scopes:
                for name, value in self._data[scope].get(r, {}).items():
                    yield r, scope, name, value
