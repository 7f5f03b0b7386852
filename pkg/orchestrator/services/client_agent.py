"""
Client agent: turns a MODEL message into an UPDATE message.

The same agent runs in every mode; only the timing strategy differs.
Simulation charges the configured duration on a simulated clock,
deployment measures wall time.
"""
import logging
import time
from dataclasses import replace
from typing import Callable, Optional, Tuple

from comm.services.codec import ModelMessage, UpdateMessage
from comm.services.updates import HOOK_ERROR_COUNT, TERMINATED, update_to_message
from core.experiment import ExperimentConfig
from hooks.services.context import ClientContext, FixedClock, ServerContext, WallClock
from hooks.services.events import HookEvent
from hooks.services.metrics_store import SERVER_SCOPE
from hooks.services.registry import HookRegistry
from partition.services.datasets import ClientData
from privacy.services.pipeline import privatize_update
from privacy.services.secagg import MaskSeedTable
from trainer.services.local_training import local_train
from trainer.services.tasks import Task

logger = logging.getLogger(__name__)

ROUND_START = "round_start"
PARTICIPANTS = "participants"


class SimulatedTiming:
    """Client time is round_start + base_round_sec + per_sample_sec * n."""

    def __init__(self, config: ExperimentConfig):
        self.cost = config.cost

    def start_clock(self, model: ModelMessage):
        return FixedClock(float(model.metadata.get(ROUND_START, 0.0)))

    def duration(self, client_id: int, sample_count: int, measured: float) -> float:
        return self.cost.duration_for(client_id, sample_count)

    def finish_clock(self, model: ModelMessage, duration: float):
        return FixedClock(float(model.metadata.get(ROUND_START, 0.0)) + duration)


class WallTiming:
    def start_clock(self, model: ModelMessage):
        return WallClock()

    def duration(self, client_id: int, sample_count: int, measured: float) -> float:
        return measured

    def finish_clock(self, model: ModelMessage, duration: float):
        return WallClock()


def parse_participants(metadata) -> Tuple[int, ...]:
    text = metadata.get(PARTICIPANTS, "")
    if not text:
        return ()
    return tuple(int(part) for part in str(text).split(","))


class ClientAgent:
    def __init__(
        self,
        config: ExperimentConfig,
        client_id: int,
        data: ClientData,
        registry: HookRegistry,
        task: Optional[Task] = None,
        timing=None,
        trainer: Callable = local_train,
    ):
        self.config = config
        self.client_id = client_id
        self.data = data
        self.registry = registry
        self.task = task or Task.from_config(config)
        self.timing = timing or SimulatedTiming(config)
        self.trainer = trainer
        self.mask_table = MaskSeedTable(config.comm.auth_token) if config.secagg.enabled else None
        self.terminated = False
        self._started = False

    def handle_model(self, model: ModelMessage) -> UpdateMessage:
        """
        One round: hooks, local training, privacy pipeline. The returned
        message carries this client's hook metrics for the round.
        """
        config = self.config
        self.terminated = False
        view = ServerContext(model.round, model.params, metadata=model.metadata, clock=self.timing.start_clock(model))
        context = ClientContext(
            self.client_id,
            model.round,
            model.params,
            self.data,
            self.task,
            spin_up_time=config.cost.spin_up_time_sec,
            shutdown_threshold=config.cost.shutdown_threshold_sec,
            clock=self.timing.start_clock(model),
        )
        if not self._started:
            self._started = True
            self.registry.emit(HookEvent.ON_CLIENT_START, view, context)
        self.registry.emit(HookEvent.BEFORE_LOCAL_TRAIN, view, context)

        started = time.perf_counter()
        update = self.trainer(
            self.task,
            model.params,
            self.data.train,
            config.local_epochs,
            config.batch_size,
            config.learning_rate,
            config.prox_mu,
            config.seed,
            client_id=self.client_id,
            round_index=model.round,
        )
        duration = self.timing.duration(self.client_id, self.data.train.n, time.perf_counter() - started)
        update = replace(update, wall_time_sec=duration)

        context.model = update.payload
        context.clock = self.timing.finish_clock(model, duration)
        self.registry.emit(HookEvent.AFTER_LOCAL_TRAIN, view, context)

        update = privatize_update(config, update, model.params, parse_participants(model.metadata), self.mask_table)
        self.registry.emit(HookEvent.BEFORE_MODEL_UPLOAD, view, context)

        metrics = view.metrics.scope_round(self.client_id, model.round)
        errors = view.metrics.scope_round(SERVER_SCOPE, model.round).get(HOOK_ERROR_COUNT, 0.0)
        if errors:
            metrics[HOOK_ERROR_COUNT] = errors
        if context.terminated:
            metrics[TERMINATED] = 1.0
            self.terminated = True
        logger.debug("client %s round %s: trained on %d samples", self.client_id, model.round, update.sample_count)
        return update_to_message(replace(update, metrics=metrics))
