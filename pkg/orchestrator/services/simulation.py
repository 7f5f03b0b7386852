"""
Simulation drivers: every client runs in this process and talks to the
server agent over an in-process channel.

Serial mode steps clients in ascending id order. Parallel mode hands the
same steps to a thread pool; all randomness is seeded per (client, round)
and updates are collected by client id, so the pool size never changes
the result.
"""
import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Optional, Tuple

from comm.services.codec import Done, ModelMessage
from comm.services.inproc import ChannelEnd, inproc_channel_pair
from comm.services.updates import TERMINATED, message_to_update
from core.experiment import ExperimentConfig, RunMode
from core.types import LocalUpdate
from hooks.services.builtins import build_registry
from partition.services.partitioner import all_client_data
from trainer.services.local_training import local_train
from trainer.services.tasks import Task
from .client_agent import ClientAgent, SimulatedTiming
from .clock import SimClock
from .errors import QuorumNotMetError
from .server import FederationResult, FederationServer, MetricsSink

logger = logging.getLogger(__name__)

MAX_ROUND_ATTEMPTS = 2
CHANNEL_TIMEOUT_SEC = 60.0


class VirtualClient:
    """A client agent behind the client end of an in-process channel."""

    def __init__(self, agent: ClientAgent, channel: ChannelEnd):
        self.agent = agent
        self.channel = channel
        self.finished = False

    @property
    def client_id(self) -> int:
        return self.agent.client_id

    def step(self) -> None:
        message = self.channel.recv(timeout=CHANNEL_TIMEOUT_SEC)
        if isinstance(message, Done):
            self.finished = True
            return
        self.channel.send(self.agent.handle_model(message))


class Simulation:
    def __init__(
        self,
        config: ExperimentConfig,
        parallel: int = 1,
        sink: Optional[MetricsSink] = None,
        trainer=None,
    ):
        self.config = config
        self.parallel = max(1, parallel)
        task = Task.from_config(config)
        dataset, client_data = all_client_data(config)
        self.clock = SimClock(config.cost, config.clients)
        self.server = FederationServer(config, build_registry(config, pooled=dataset), self.clock, sink, task)
        self.channels: Dict[int, ChannelEnd] = {}
        self.clients: Dict[int, VirtualClient] = {}
        timing = SimulatedTiming(config)
        for cid in range(config.clients):
            server_end, client_end = inproc_channel_pair(serialize=config.comm.serialize_inproc)
            agent = ClientAgent(config, cid, client_data[cid], self.server.registry, task, timing, trainer or local_train)
            self.channels[cid] = server_end
            self.clients[cid] = VirtualClient(agent, client_end)
        self._pool: Optional[ThreadPoolExecutor] = None

    def run(self) -> FederationResult:
        self.server.start()
        if self.parallel > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.parallel, thread_name_prefix="flk-client")
        try:
            if self.server.is_async:
                self.run_async_loop()
            else:
                while not self.server.rounds_done:
                    self.run_sync_round()
            self._broadcast_done()
        finally:
            if self._pool is not None:
                self._pool.shutdown(wait=True)
        costs = self.clock.finalize()
        self.server.record_costs(costs)
        result = self.server.finish()
        result.costs = costs
        logger.info("Simulated %.3f s, total cost %.4f", self.clock.now(), self.clock.total_cost)
        return result

    def _step(self, client_ids: Iterable[int]) -> None:
        clients = [self.clients[cid] for cid in client_ids]
        if self._pool is None:
            for client in clients:
                client.step()
        else:
            list(self._pool.map(VirtualClient.step, clients))

    def _collect(self, client_ids: Iterable[int]) -> List[LocalUpdate]:
        return [message_to_update(self.channels[cid].recv(timeout=CHANNEL_TIMEOUT_SEC)) for cid in sorted(client_ids)]

    def _dispatch(self, client_ids: Iterable[int], model: ModelMessage) -> List[LocalUpdate]:
        client_ids = sorted(client_ids)
        for cid in client_ids:
            self.channels[cid].send(model)
        self._step(client_ids)
        return self._collect(client_ids)

    def run_sync_round(self) -> None:
        config = self.config
        timeout = config.timing.round_timeout_sec
        for attempt in range(MAX_ROUND_ATTEMPTS):
            state = self.server.open_round(attempt)
            for cid in state.selected:
                self.clock.ensure_up(cid, state.round_start)
            updates = self._dispatch(state.selected, self.server.model_message(state))

            late = [u.client_id for u in updates if timeout is not None and u.wall_time_sec > timeout]
            longest = max(u.wall_time_sec for u in updates)
            end = state.round_start + (timeout if late else longest)
            for update in updates:
                self.clock.mark_busy(update.client_id, state.round_start + update.wall_time_sec)
                if update.client_id in late:
                    continue
                self.server.receive(update)
                if update.metrics.get(TERMINATED):
                    self.clock.terminate(update.client_id, state.round_start + update.wall_time_sec)
            self.clock.advance_to(end)
            if late:
                logger.info("Round %d: clients %s missed the %.3f s deadline",
                            state.round, late, timeout)

            self.server.check_secagg_dropout()
            if self.server.quorum_met():
                self.server.close_round(end)
                return
            logger.warning("Round %d attempt %d: quorum not met with %d of %d updates",
                           state.round, attempt, len(state.received), len(state.selected))
        raise QuorumNotMetError(f"Round {self.server.round}: quorum not met after {MAX_ROUND_ATTEMPTS} attempts")

    def run_async_loop(self) -> None:
        """
        Every client starts on version 0. Updates are applied in order of
        simulated finish time, ties broken by client id; the submitting
        client immediately gets the fresh model.
        """
        in_flight: List[Tuple[float, int, LocalUpdate]] = []
        for update in self._dispatch(self.clients, self.server.async_model()):
            heapq.heappush(in_flight, (update.wall_time_sec, update.client_id, update))
        while in_flight and not self.server.rounds_done:
            finish, cid, update = heapq.heappop(in_flight)
            self.clock.advance_to(finish)
            self.server.apply_async(update)
            if self.server.rounds_done:
                break
            (fresh,) = self._dispatch([cid], self.server.async_model())
            heapq.heappush(in_flight, (finish + fresh.wall_time_sec, cid, fresh))
        if in_flight:
            logger.info("Async budget spent with %d updates still in flight", len(in_flight))

    def _broadcast_done(self) -> None:
        done = Done(final_round=self.server.round)
        for cid in sorted(self.clients):
            self.channels[cid].send(done)
        self._step(sorted(self.clients))


def run_simulation(
    config: ExperimentConfig,
    parallel: Optional[int] = None,
    sink: Optional[MetricsSink] = None,
    trainer=None,
) -> FederationResult:
    """
    Run a whole experiment in-process. ``parallel`` is the worker count;
    left unset it is 1 for simulate-serial and 4 for simulate-parallel.
    """
    if parallel is None:
        parallel = 4 if config.mode is RunMode.SIMULATE_PARALLEL else 1
    logger.info("Simulating %s with %d worker(s)", config.mode.value, parallel)
    return Simulation(config, parallel, sink, trainer).run()
