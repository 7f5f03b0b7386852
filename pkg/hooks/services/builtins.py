"""
Built-in hooks: local and global evaluation, and cost-aware shutdown
"""
import logging
from typing import Optional

from aggregation.services.speed import estimate_round_eta
from core.experiment import ExperimentConfig
from partition.services.datasets import Dataset
from trainer.services.local_training import evaluate
from trainer.services.tasks import Task
from .context import ClientContext, ServerContext
from .events import HookEvent
from .metrics_store import SERVER_SCOPE
from .registry import HookRegistry

logger = logging.getLogger(__name__)

ROUND_ETA = "round_eta"


def eval_local(server_context: ServerContext, client_context: ClientContext) -> None:
    """Evaluate the local model on the client's test split."""
    test = client_context.data.test
    if test.n == 0:
        return
    result = evaluate(client_context.task, client_context.model, test)
    cid, rnd = client_context.id, server_context.round
    server_context.metrics[cid][rnd] = {"test_loss": result["loss"], "test_acc": result["accuracy"]}


def set_round_eta(server_context: ServerContext, client_context: Optional[ClientContext] = None) -> None:
    """
    Publish when the slowest expected client should finish. Without an
    observation for every candidate the ETA is withdrawn.
    """
    eta = estimate_round_eta(server_context.speed_stats, server_context.candidates, server_context.clock.now())
    if eta is None:
        server_context.clear_metadata(ROUND_ETA)
        return
    server_context.set_metadata(ROUND_ETA, eta)


def check_idletime_and_shutdown(server_context: ServerContext, client_context: ClientContext) -> None:
    eta = server_context.get_metadata(ROUND_ETA)
    if eta is None:
        return
    idle = max(0.0, eta - client_context.clock.now() - client_context.spin_up_time)
    if idle > client_context.shutdown_threshold:
        logger.info(
            "client %s round %s: idle %.3fs exceeds %.3fs, shutting down",
            client_context.id, server_context.round, idle, client_context.shutdown_threshold,
        )
        client_context.terminate_self()


def global_evaluator(task: Task, pooled: Dataset):
    def eval_global(server_context: ServerContext, client_context: Optional[ClientContext] = None) -> None:
        result = evaluate(task, server_context.global_model, pooled)
        server_context.metrics[SERVER_SCOPE][server_context.round] = {
            "global_loss": result["loss"],
            "global_acc": result["accuracy"],
        }
    return eval_global


def install_builtins(
    registry: HookRegistry,
    config: ExperimentConfig,
    task: Optional[Task] = None,
    pooled: Optional[Dataset] = None,
) -> HookRegistry:
    """
    Register the built-ins the config enables. Global evaluation needs the
    pooled training data and is skipped on client-only registries.
    """
    hooks = config.hooks
    if hooks.eval_local:
        registry.register_hook(HookEvent.AFTER_LOCAL_TRAIN, eval_local, priority=0)
    if hooks.cost_shutdown:
        registry.register_hook(HookEvent.BEFORE_CLIENT_SELECTION, set_round_eta, priority=0)
        registry.register_hook(HookEvent.AFTER_LOCAL_TRAIN, check_idletime_and_shutdown, priority=100)
    if hooks.eval_global and pooled is not None:
        registry.register_hook(
            HookEvent.AFTER_AGGREGATION,
            global_evaluator(task or Task.from_config(config), pooled),
            priority=0,
        )
    return registry


def build_registry(config: ExperimentConfig, pooled: Optional[Dataset] = None) -> HookRegistry:
    return install_builtins(HookRegistry(strict=config.hooks.strict), config, pooled=pooled)
