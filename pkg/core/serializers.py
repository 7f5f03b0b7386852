import math
from collections.abc import Mapping

from rest_framework import serializers

from .experiment import (
    Aggregator,
    PartitionScheme,
    RunMode,
    TaskKind,
)
from flkernel.config import (
    DEFAULT_FIXED_POINT_SCALE,
    DEFAULT_HOST,
    DEFAULT_PORT,
    SECAGG_MAGNITUDE_BOUND,
    SPEED_EMA_BETA,
)

MAX_U64 = (1 << 64) - 1


def in_range(name, low=None, high=None, low_open=False, high_open=False):
    """
    Validator raising "<name> out of range" when the value leaves the interval
    """
    def validate(value):
        if low is not None and (value < low or (low_open and value == low)):
            raise serializers.ValidationError(f"{name} out of range")
        if high is not None and (value > high or (high_open and value == high)):
            raise serializers.ValidationError(f"{name} out of range")
    return validate


class StrictSerializer(serializers.Serializer):
    """
    Serializer that rejects keys it does not declare
    """

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {key: [f"Unknown field '{key}'."] for key in unknown}
                )
        return super().to_internal_value(data)


class StrictIntegerField(serializers.IntegerField):
    """IntegerField that refuses booleans and non-integral floats"""

    def to_internal_value(self, data):
        if isinstance(data, bool) or (isinstance(data, float) and not data.is_integer()):
            self.fail('invalid')
        return super().to_internal_value(data)


class StrictFloatField(serializers.FloatField):
    """FloatField that refuses booleans, NaN and infinities"""

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail('invalid')
        value = super().to_internal_value(data)
        if not math.isfinite(value):
            self.fail('invalid')
        return value


class QuorumField(serializers.Field):
    """Either the string "all" or a positive integer"""

    def to_internal_value(self, data):
        if data == "all":
            return "all"
        if isinstance(data, int) and not isinstance(data, bool) and data >= 1:
            return data
        raise serializers.ValidationError("quorum out of range")

    def to_representation(self, value):
        return value


class PerClientField(serializers.Field):
    """A non-negative number, or one non-negative number per client"""

    def __init__(self, name, **kwargs):
        self.label_name = name
        super().__init__(**kwargs)

    def _number(self, item):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise serializers.ValidationError(f"{self.label_name} must be a number or a list of numbers")
        if not math.isfinite(item) or item < 0:
            raise serializers.ValidationError(f"{self.label_name} out of range")
        return float(item)

    def to_internal_value(self, data):
        if isinstance(data, list):
            if not data:
                raise serializers.ValidationError(f"{self.label_name} list is empty")
            return tuple(self._number(item) for item in data)
        return self._number(data)

    def to_representation(self, value):
        return list(value) if isinstance(value, tuple) else value


class DPSerializer(StrictSerializer):
    enabled = serializers.BooleanField(default=False)
    clip = StrictFloatField(default=1.0, validators=[in_range("clip", low=0, low_open=True)])
    epsilon = StrictFloatField(default=1.0, validators=[in_range("epsilon", low=0, low_open=True)])
    delta = StrictFloatField(
        default=1e-5,
        validators=[in_range("delta", low=0, high=1, low_open=True, high_open=True)],
    )


class SecAggSerializer(StrictSerializer):
    enabled = serializers.BooleanField(default=False)
    fixed_point_scale = StrictIntegerField(
        default=DEFAULT_FIXED_POINT_SCALE,
        validators=[in_range("fixed_point_scale", low=1, high=1 << 62)],
    )


class PartitionSerializer(StrictSerializer):
    scheme = serializers.ChoiceField(choices=[s.value for s in PartitionScheme], default="iid")
    dirichlet_alpha = StrictFloatField(
        default=0.5, validators=[in_range("dirichlet_alpha", low=0, low_open=True)]
    )
    shards_per_client = StrictIntegerField(
        default=2, validators=[in_range("shards_per_client", low=1)]
    )


class TaskSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=[k.value for k in TaskKind], default="logreg")
    n_per_class = StrictIntegerField(default=100, validators=[in_range("n_per_class", low=1)])
    n_classes = StrictIntegerField(default=2, validators=[in_range("n_classes", low=1)])
    feature_dim = StrictIntegerField(default=2, validators=[in_range("feature_dim", low=1)])
    class_sep = StrictFloatField(default=4.0, validators=[in_range("class_sep", low=0, low_open=True)])
    hidden_units = StrictIntegerField(default=8, validators=[in_range("hidden_units", low=1)])


class CommSerializer(StrictSerializer):
    host = serializers.CharField(default=DEFAULT_HOST)
    port = StrictIntegerField(default=DEFAULT_PORT, validators=[in_range("port", low=0, high=65535)])
    auth_token = serializers.CharField(default="", allow_blank=True, trim_whitespace=False)
    serialize_inproc = serializers.BooleanField(default=False)


class TimingSerializer(StrictSerializer):
    round_timeout_sec = StrictFloatField(
        default=None,
        allow_null=True,
        validators=[in_range("round_timeout_sec", low=0, low_open=True)],
    )
    quorum = QuorumField(default="all")
    speed_ema_beta = StrictFloatField(
        default=SPEED_EMA_BETA,
        validators=[in_range("speed_ema_beta", low=0, high=1, low_open=True)],
    )


class CostSerializer(StrictSerializer):
    price_per_sec = PerClientField("price_per_sec", default=1.0)
    base_round_sec = PerClientField("base_round_sec", default=1.0)
    per_sample_sec = StrictFloatField(default=0.0, validators=[in_range("per_sample_sec", low=0)])
    spin_up_time_sec = StrictFloatField(default=0.0, validators=[in_range("spin_up_time_sec", low=0)])
    shutdown_threshold_sec = StrictFloatField(
        default=0.0, validators=[in_range("shutdown_threshold_sec", low=0)]
    )


class HooksSerializer(StrictSerializer):
    eval_local = serializers.BooleanField(default=True)
    eval_global = serializers.BooleanField(default=True)
    cost_shutdown = serializers.BooleanField(default=False)
    strict = serializers.BooleanField(default=False)


SECTIONS = {
    "dp": DPSerializer,
    "secagg": SecAggSerializer,
    "partition": PartitionSerializer,
    "task": TaskSerializer,
    "comm": CommSerializer,
    "timing": TimingSerializer,
    "cost": CostSerializer,
    "hooks": HooksSerializer,
}


class ExperimentConfigSerializer(StrictSerializer):
    """
    Strict schema of the experiment configuration document.
    """
    mode = serializers.ChoiceField(choices=[m.value for m in RunMode], default="simulate-serial")
    seed = StrictIntegerField(validators=[in_range("seed", low=0, high=MAX_U64)])
    rounds = StrictIntegerField(validators=[in_range("rounds", low=0)])
    clients = StrictIntegerField(validators=[in_range("clients", low=1)])
    client_fraction = StrictFloatField(
        default=1.0,
        validators=[in_range("client_fraction", low=0, high=1, low_open=True)],
    )
    local_epochs = StrictIntegerField(default=1, validators=[in_range("local_epochs", low=0)])
    batch_size = StrictIntegerField(default=32, validators=[in_range("batch_size", low=1)])
    learning_rate = StrictFloatField(
        default=0.1, validators=[in_range("learning_rate", low=0, low_open=True)]
    )
    prox_mu = StrictFloatField(default=0.0, validators=[in_range("prox_mu", low=0)])
    aggregator = serializers.ChoiceField(choices=[a.value for a in Aggregator], default="fedavg")
    async_alpha = StrictFloatField(
        default=0.5, validators=[in_range("async_alpha", low=0, high=1, low_open=True)]
    )
    staleness_exponent = StrictFloatField(
        default=0.5, validators=[in_range("staleness_exponent", low=0)]
    )
    async_budget = StrictIntegerField(
        required=False, validators=[in_range("async_budget", low=1)]
    )
    dp = DPSerializer()
    secagg = SecAggSerializer()
    partition = PartitionSerializer()
    task = TaskSerializer()
    comm = CommSerializer()
    timing = TimingSerializer()
    cost = CostSerializer()
    hooks = HooksSerializer()

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            # absent sections still need their defaults resolved
            data = dict(data)
            for section in SECTIONS:
                data.setdefault(section, {})
        return super().to_internal_value(data)

    def validate(self, attrs):
        clients = attrs["clients"]
        task = attrs["task"]
        total = task["n_per_class"] * task["n_classes"]

        if "async_budget" not in attrs:
            attrs["async_budget"] = max(1, attrs["rounds"] * clients)

        if clients > total:
            raise serializers.ValidationError({"clients": "clients out of range"})

        partition = attrs["partition"]
        if partition["scheme"] == "shards" and clients * partition["shards_per_client"] > total:
            raise serializers.ValidationError(
                {"partition": {"shards_per_client": "shards_per_client out of range"}}
            )

        cost = attrs["cost"]
        for name in ("price_per_sec", "base_round_sec"):
            value = cost[name]
            if isinstance(value, tuple) and len(value) != clients:
                raise serializers.ValidationError(
                    {"cost": {name: f"{name} needs exactly {clients} entries"}}
                )

        quorum = attrs["timing"]["quorum"]
        selected = max(1, math.ceil(attrs["client_fraction"] * clients))
        if quorum != "all" and quorum > selected:
            raise serializers.ValidationError({"timing": {"quorum": "quorum out of range"}})

        secagg = attrs["secagg"]
        if secagg["enabled"]:
            if attrs["aggregator"] == "async":
                raise serializers.ValidationError(
                    {"secagg": {"enabled": "secure aggregation requires the fedavg aggregator"}}
                )
            if total * secagg["fixed_point_scale"] * SECAGG_MAGNITUDE_BOUND >= 2 ** 63:
                raise serializers.ValidationError(
                    {"secagg": {"fixed_point_scale": "fixed_point_scale out of range"}}
                )
        return attrs
