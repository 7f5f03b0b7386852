"""
Loading and validation of experiment configuration documents
"""
import json
import logging
from pathlib import Path
from typing import Any, List, Mapping, Union

from ..exceptions import ConfigError
from ..experiment import (
    Aggregator,
    CommConfig,
    CostConfig,
    DPConfig,
    ExperimentConfig,
    HooksConfig,
    PartitionConfig,
    PartitionScheme,
    RunMode,
    SecAggConfig,
    TaskConfig,
    TaskKind,
    TimingConfig,
)
from ..serializers import ExperimentConfigSerializer

logger = logging.getLogger(__name__)


def _flatten_errors(detail: Any, prefix: str = "") -> List[str]:
    if isinstance(detail, Mapping):
        messages = []
        for key, value in detail.items():
            path = key if not prefix or key == "non_field_errors" else f"{prefix}.{key}"
            messages.extend(_flatten_errors(value, path))
        return messages
    if isinstance(detail, list):
        messages = []
        for item in detail:
            messages.extend(_flatten_errors(item, prefix))
        return messages
    return [f"{prefix}: {detail}" if prefix else str(detail)]


def validate_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """
    Validate a parsed configuration document and resolve every default
    """
    if not isinstance(raw, Mapping):
        raise ConfigError("Configuration document must be a JSON object")

    serializer = ExperimentConfigSerializer(data=raw)
    if not serializer.is_valid():
        raise ConfigError("; ".join(_flatten_errors(serializer.errors)))

    data = serializer.validated_data
    config = ExperimentConfig(
        mode=RunMode(data["mode"]),
        seed=data["seed"],
        rounds=data["rounds"],
        clients=data["clients"],
        client_fraction=data["client_fraction"],
        local_epochs=data["local_epochs"],
        batch_size=data["batch_size"],
        learning_rate=data["learning_rate"],
        prox_mu=data["prox_mu"],
        aggregator=Aggregator(data["aggregator"]),
        async_alpha=data["async_alpha"],
        staleness_exponent=data["staleness_exponent"],
        async_budget=data["async_budget"],
        dp=DPConfig(**data["dp"]),
        secagg=SecAggConfig(**data["secagg"]),
        partition=PartitionConfig(
            scheme=PartitionScheme(data["partition"]["scheme"]),
            dirichlet_alpha=data["partition"]["dirichlet_alpha"],
            shards_per_client=data["partition"]["shards_per_client"],
        ),
        task=TaskConfig(**{**data["task"], "kind": TaskKind(data["task"]["kind"])}),
        comm=CommConfig(**data["comm"]),
        timing=TimingConfig(**data["timing"]),
        cost=CostConfig(**data["cost"]),
        hooks=HooksConfig(**data["hooks"]),
    )
    logger.debug("Validated config, digest %s", config.digest.hex())
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a UTF-8 JSON configuration file and validate it
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {str(e)}")

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {str(e)}")

    return validate_config(raw)
