"""
What each subcommand does, free of argument parsing
"""
import logging
from pathlib import Path
from typing import Optional, Union

from core.experiment import RunMode
from core.services.config_loader import load_config
from orchestrator.services.artifacts import METRICS_FILENAME, MODEL_FILENAME, write_model
from orchestrator.services.deployment import run_client, run_server
from orchestrator.services.server import FederationResult
from orchestrator.services.simulation import run_simulation
from partition.services.export import export_partitions
from .metrics import MetricsWriter, format_summary, read_metrics, summarize

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def simulate(config_path: PathLike, out_dir: PathLike, parallel: Optional[int] = None) -> FederationResult:
    config = load_config(config_path)
    if parallel is not None:
        mode = RunMode.SIMULATE_PARALLEL if parallel > 1 else RunMode.SIMULATE_SERIAL
    elif config.mode in (RunMode.SIMULATE_SERIAL, RunMode.SIMULATE_PARALLEL):
        mode = config.mode
    else:
        mode = RunMode.SIMULATE_SERIAL
    config = config.with_mode(mode)
    out_dir = Path(out_dir)
    with MetricsWriter(out_dir / METRICS_FILENAME) as sink:
        result = run_simulation(config, parallel=parallel, sink=sink)
    write_model(out_dir / MODEL_FILENAME, result.params, result.digest)
    return result


def serve(config_path: PathLike, out_dir: PathLike, on_listening=None, port: Optional[int] = None) -> FederationResult:
    config = load_config(config_path).with_mode(RunMode.SERVER)
    out_dir = Path(out_dir)
    with MetricsWriter(out_dir / METRICS_FILENAME, wall=True) as sink:
        return run_server(config, out_dir, sink=sink, on_listening=on_listening, port=port)


def join(config_path: PathLike, client_id: Optional[int] = None, proxy=None) -> int:
    config = load_config(config_path).with_mode(RunMode.CLIENT)
    return run_client(config, client_id, proxy=proxy)


def export(config_path: PathLike, out_dir: PathLike):
    return export_partitions(load_config(config_path), out_dir)


def inspect(metrics_path: PathLike, summary: bool = False) -> str:
    records = list(read_metrics(metrics_path))
    if summary:
        return format_summary(summarize(records))
    counts = {}
    for record in records:
        counts[record["name"]] = counts.get(record["name"], 0) + 1
    return "\n".join(f"{name}: {count}" for name, count in sorted(counts.items())) or "no records"
