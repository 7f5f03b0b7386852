"""
Metrics JSONL: one MetricRecord per line, written as rounds complete
"""
import json
import logging
import math
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, List, Set, Tuple, Union

from rest_framework import serializers

from core.exceptions import FederationError
from core.serializers import StrictSerializer
from hooks.services.context import Clock
from hooks.services.metrics_store import SERVER_SCOPE, MetricsStore

logger = logging.getLogger(__name__)


class MetricsFileError(FederationError):
    """Exception for a metrics file that does not hold MetricRecord lines"""
    pass


class TimestampField(serializers.Field):
    """Simulated seconds (number) or an ISO-8601 UTC string"""

    def to_internal_value(self, data):
        if isinstance(data, bool):
            raise serializers.ValidationError("ts must be a number or an ISO-8601 string")
        if isinstance(data, (int, float)):
            if not math.isfinite(data):
                raise serializers.ValidationError("ts must be finite")
            return float(data)
        if isinstance(data, str):
            try:
                datetime.fromisoformat(data)
            except ValueError:
                raise serializers.ValidationError("ts is not an ISO-8601 timestamp")
            return data
        raise serializers.ValidationError("ts must be a number or an ISO-8601 string")

    def to_representation(self, value):
        return value


class MetricRecordSerializer(StrictSerializer):
    ts = TimestampField()
    round = serializers.IntegerField(min_value=0)
    scope = serializers.CharField()
    name = serializers.CharField()
    value = serializers.FloatField()

    def validate_scope(self, value):
        if value != SERVER_SCOPE and not value.isdigit():
            raise serializers.ValidationError("scope must be 'server' or a client id")
        return value


def _timestamp(clock: Clock, wall: bool):
    now = clock.now()
    if wall:
        return datetime.fromtimestamp(now, tz=timezone.utc).isoformat()
    return float(now)


class MetricsWriter:
    """
    Appends every store entry not yet written. The server calls ``flush``
    after each round, so a crash loses at most the open round.
    """

    def __init__(self, path: Union[str, Path], wall: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.wall = wall
        self._written: Set[Tuple[int, str, str]] = set()
        self._file = self.path.open("w", encoding="utf-8")

    def flush(self, store: MetricsStore, clock: Clock) -> None:
        ts = _timestamp(clock, self.wall)
        for round_index, scope, name, value in store.entries():
            key = (round_index, scope, name)
            if key in self._written:
                continue
            self._written.add(key)
            record = {"ts": ts, "round": round_index, "scope": scope, "name": name, "value": value}
            self._file.write(json.dumps(record, separators=(",", ":"), allow_nan=False) + "\n")
        self._file.flush()

    @property
    def count(self) -> int:
        return len(self._written)

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def read_metrics(path: Union[str, Path]) -> Iterator[Dict]:
    """Validated records of a metrics file, in file order."""
    with Path(path).open("rb") as handle:
        for number, raw in enumerate(handle, start=1):
            try:
                document = json.loads(raw.decode("utf-8"))
            except UnicodeDecodeError as e:
                raise MetricsFileError(f"{path}:{number}: not UTF-8 text: {e}") from e
            except json.JSONDecodeError as e:
                raise MetricsFileError(f"{path}:{number}: not a JSON object: {e}") from e
            serializer = MetricRecordSerializer(data=document)
            if not serializer.is_valid():
                raise MetricsFileError(f"{path}:{number}: {serializer.errors}")
            yield dict(serializer.validated_data)


def summarize(records: List[Dict]) -> Dict:
    """
    Final-round server accuracy and each client's mean test accuracy.
    """
    global_acc = {r["round"]: r["value"] for r in records if r["scope"] == SERVER_SCOPE and r["name"] == "global_acc"}
    per_client = defaultdict(list)
    for record in records:
        if record["scope"] != SERVER_SCOPE and record["name"] == "test_acc":
            per_client[int(record["scope"])].append(record["value"])
    final_round = max(global_acc) if global_acc else None
    return {
        "records": len(records),
        "final_round": final_round,
        "global_acc": global_acc[final_round] if final_round is not None else None,
        "mean_test_acc": {cid: sum(values) / len(values) for cid, values in sorted(per_client.items())},
    }


def format_summary(summary: Dict) -> str:
    lines = [f"records: {summary['records']}"]
    if summary["final_round"] is None:
        lines.append("global_acc: n/a")
    else:
        lines.append(f"global_acc (round {summary['final_round']}): {summary['global_acc']:.6f}")
    for client_id, mean in summary["mean_test_acc"].items():
        lines.append(f"client {client_id} mean test_acc: {mean:.6f}")
    return "\n".join(lines)
