"""
Server agent: owns the global model and every piece of federation state.

Only one thread calls into a FederationServer at a time. The simulation
drivers call it directly; in deployment the agent loop drains the
endpoint's command queue into it.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple

from aggregation.services.selection import select_clients
from aggregation.services.speed import ClientSpeedStats, observe_duration
from aggregation.services.strategies import async_apply, fedavg
from comm.services.codec import ModelMessage
from comm.services.updates import HOOK_ERROR_COUNT, TERMINATED
from core.experiment import Aggregator, ExperimentConfig
from core.types import InvalidUpdateError, LocalUpdate, ParameterVector, RoundState
from hooks.services.context import Clock, ServerContext
from hooks.services.events import HookEvent
from hooks.services.metrics_store import SERVER_SCOPE, MetricsStore
from hooks.services.registry import HookRegistry
from privacy.services.secagg import SecAggDropoutError, secagg_aggregate
from trainer.services.tasks import Task, initial_params
from .client_agent import PARTICIPANTS, ROUND_START
from .errors import OrchestrationError

logger = logging.getLogger(__name__)

ROUND_DURATION = "round_duration"
STRAGGLER_DROPPED = "straggler_dropped"
TRAIN_LOSS = "train_loss"
COST_TOTAL = "cost_total"


class MetricsSink(Protocol):
    def flush(self, store: MetricsStore, clock: Clock) -> None:
        ...


@dataclass
class FederationResult:
    params: ParameterVector
    metrics: MetricsStore
    digest: bytes
    rounds: int
    applications: int = 0
    costs: Dict[int, float] = field(default_factory=dict)


class FederationServer:
    def __init__(
        self,
        config: ExperimentConfig,
        registry: HookRegistry,
        clock: Clock,
        sink: Optional[MetricsSink] = None,
        task: Optional[Task] = None,
    ):
        self.config = config
        self.task = task or Task.from_config(config)
        self.registry = registry
        self.clock = clock
        self.sink = sink
        self.global_params = initial_params(self.task, config.seed)
        self.round = 0
        self.applications = 0
        self.speed_stats = ClientSpeedStats(beta=config.timing.speed_ema_beta)
        self.metrics = MetricsStore()
        self.context = ServerContext(
            0, self.global_params, metrics=self.metrics, speed_stats=self.speed_stats, clock=clock
        )
        self.round_state: Optional[RoundState] = None
        self.terminated: set = set()
        self.last_applied: Dict[int, int] = {}
        self.started = False
        self.finished = False

    # lifecycle

    def start(self) -> None:
        self.registry.freeze()
        self.started = True
        self.registry.emit(HookEvent.ON_SERVER_START, self.context)
        logger.info(
            "Federation started: %d clients, %d rounds, aggregator %s",
            self.config.clients, self.config.rounds, self.config.aggregator.value,
        )

    @property
    def is_async(self) -> bool:
        return self.config.aggregator is Aggregator.ASYNC

    @property
    def rounds_done(self) -> bool:
        if self.is_async:
            return self.applications >= self.config.async_budget
        return self.round >= self.config.rounds

    def finish(self) -> FederationResult:
        self.finished = True
        self.context.advance(self.round, self.global_params)
        self.registry.emit(HookEvent.ON_EXPERIMENT_END, self.context)
        self._flush()
        logger.info("Federation finished after %d rounds", self.round)
        return FederationResult(
            params=self.global_params,
            metrics=self.metrics,
            digest=self.config.digest,
            rounds=self.round,
            applications=self.applications,
        )

    def _flush(self) -> None:
        if self.sink is not None:
            self.sink.flush(self.metrics, self.clock)

    # synchronous rounds

    def open_round(self, attempt: int = 0) -> RoundState:
        config = self.config
        if self.round >= config.rounds:
            raise OrchestrationError(f"All {config.rounds} rounds are done")
        selected = select_clients(config.clients, config.client_fraction, self.round, config.seed, attempt)
        self.context.advance(self.round, self.global_params)
        self.context.candidates = selected
        self.context.speed_stats = self.speed_stats
        self.registry.emit(HookEvent.BEFORE_CLIENT_SELECTION, self.context)
        self.context.selected = selected
        eta = self.context.get_metadata("round_eta")
        self.round_state = RoundState(
            round=self.round,
            selected=selected,
            global_params=self.global_params,
            round_start=self.clock.now(),
            round_eta=eta if isinstance(eta, (int, float)) else None,
            attempt=attempt,
        )
        logger.info("Round %d (attempt %d): selected %s", self.round, attempt, list(selected))
        return self.round_state

    def model_message(self, round_state: Optional[RoundState] = None) -> ModelMessage:
        state = round_state or self.round_state
        metadata = self.context.metadata
        metadata[ROUND_START] = float(state.round_start)
        if self.config.secagg.enabled:
            metadata[PARTICIPANTS] = ",".join(str(cid) for cid in state.selected)
        return ModelMessage(round=state.round, params=state.global_params, metadata=metadata)

    def receive(self, update: LocalUpdate) -> bool:
        """
        Accept an update for the open round. Updates for other rounds or from
        unselected clients are discarded; a repeat submission is accepted once.
        """
        state = self.round_state
        if state is None or update.round != state.round or update.client_id not in state.selected:
            logger.warning(
                "Discarding update from client %s for round %s (straggler)",
                update.client_id, update.round,
            )
            return False
        if update.client_id in state.received:
            return True
        if update.masked != self.config.secagg.enabled:
            raise InvalidUpdateError(
                f"Client {update.client_id} sent masked={update.masked} with secagg enabled={self.config.secagg.enabled}"
            )
        state.received[update.client_id] = update
        return True

    def quorum_met(self) -> bool:
        state = self.round_state
        return len(state.received) >= self.config.timing.quorum_for(len(state.selected))

    def check_secagg_dropout(self) -> None:
        """Masks only cancel when every selected client reported."""
        state = self.round_state
        if self.config.secagg.enabled and state is not None and state.outstanding:
            raise SecAggDropoutError(
                f"secagg dropout: no masked update from clients {list(state.outstanding)} in round {state.round}"
            )

    def close_round(self, end_time: Optional[float] = None) -> ParameterVector:
        """
        Aggregate what arrived; selected clients still outstanding count as
        dropped stragglers.
        """
        state = self.round_state
        if state is None:
            raise OrchestrationError("No round is open")
        t = state.round
        dropped = state.outstanding
        updates = [state.received[cid] for cid in sorted(state.received)]
        if not updates:
            raise OrchestrationError(f"Round {t} closed with no updates")

        self._merge_client_metrics(updates, t)
        if dropped:
            logger.warning("Round %d: dropping stragglers %s", t, list(dropped))
            self.metrics.record(SERVER_SCOPE, t, STRAGGLER_DROPPED, len(dropped))

        self.registry.emit(HookEvent.BEFORE_AGGREGATION, self.context)
        if self.config.secagg.enabled:
            if dropped:
                raise SecAggDropoutError(f"secagg dropout: no masked update from clients {list(dropped)}")
            new_params = secagg_aggregate(updates, state.selected, self.config.secagg.fixed_point_scale)
        else:
            new_params = fedavg(updates)

        for update in updates:
            if update.wall_time_sec > 0:
                self.speed_stats = observe_duration(self.speed_stats, update.client_id, update.wall_time_sec)
        end = self.clock.now() if end_time is None else end_time
        self.metrics.record(SERVER_SCOPE, t, ROUND_DURATION, max(0.0, end - state.round_start))

        self.global_params = new_params
        self.context.advance(t, new_params)
        self.context.speed_stats = self.speed_stats
        self.registry.emit(HookEvent.AFTER_AGGREGATION, self.context)

        self.round = t + 1
        self.round_state = None
        self._flush()
        logger.info("Round %d closed with %d updates", t, len(updates))
        return new_params

    def _merge_client_metrics(self, updates: List[LocalUpdate], round_index: int) -> None:
        for update in updates:
            self._merge_update_metrics(update, update.round, round_index)

    def _merge_update_metrics(self, update: LocalUpdate, client_round: int, server_round: int) -> None:
        metrics = dict(update.metrics)
        errors = metrics.pop(HOOK_ERROR_COUNT, 0.0)
        if metrics.pop(TERMINATED, 0.0):
            self.terminated.add(update.client_id)
        if errors:
            self.metrics.increment(SERVER_SCOPE, server_round, HOOK_ERROR_COUNT, errors)
        self.metrics.merge(update.client_id, client_round, metrics)
        self.metrics.record(update.client_id, client_round, TRAIN_LOSS, update.train_loss)

    # asynchronous loop

    def async_model(self) -> ModelMessage:
        metadata = self.context.metadata
        metadata[ROUND_START] = float(self.clock.now())
        return ModelMessage(round=self.applications, params=self.global_params, metadata=metadata)

    def apply_async(self, update: LocalUpdate) -> Tuple[bool, ParameterVector]:
        """
        Apply one update with staleness discounting. Returns whether it was
        applied; updates after the budget is spent are discarded.
        """
        if self.rounds_done:
            logger.info("Async budget spent; discarding update from client %s", update.client_id)
            return False, self.global_params
        if self.last_applied.get(update.client_id) == update.round:
            logger.info("Client %s resent its update for version %d; already applied", update.client_id, update.round)
            return False, self.global_params
        t = self.applications
        self.context.advance(t, self.global_params)
        self._merge_update_metrics(update, update.round, t)
        self.registry.emit(HookEvent.BEFORE_AGGREGATION, self.context)
        self.global_params = async_apply(
            self.global_params,
            update.payload,
            t,
            update.round,
            self.config.async_alpha,
            self.config.staleness_exponent,
        )
        if update.wall_time_sec > 0:
            self.speed_stats = observe_duration(self.speed_stats, update.client_id, update.wall_time_sec)
        self.context.advance(t, self.global_params)
        self.registry.emit(HookEvent.AFTER_AGGREGATION, self.context)
        self.last_applied[update.client_id] = update.round
        self.applications = t + 1
        self.round = self.applications
        self._flush()
        logger.debug("Async application %d from client %s (staleness %d)", t, update.client_id, t - update.round)
        return True, self.global_params

    def record_costs(self, costs: Dict[int, float]) -> None:
        if self.round == 0:
            return
        final = self.round - 1
        for client_id, cost in sorted(costs.items()):
            self.metrics.record(client_id, final, COST_TOTAL, cost)
        self._flush()
