"""
Networked deployment: the server agent behind the TCP endpoint, and the
client loop behind a ClientProxy.

Round logic is the FederationServer's; this module only maps requests onto
it and enforces wall-clock deadlines.
"""
import logging
import re
import time
from pathlib import Path
from typing import Callable, Dict, Optional, Set, Union

from comm.services.codec import Ack, Done, ErrorCode, ErrorMessage, GetModel, Message, Register, RegisterAck, UpdateMessage
from comm.services.endpoint import Command, CommandQueue, server_endpoint
from comm.services.proxy import ClientProxy, client_name_for
from comm.services.updates import message_to_update
from core.exceptions import FederationError
from core.experiment import ExperimentConfig
from core.types import InvalidUpdateError
from flkernel.config import DONE_GRACE_SEC
from hooks.services.builtins import build_registry
from hooks.services.context import WallClock
from partition.services.partitioner import build_federation_data, client_data_for
from privacy.services.secagg import SecAggDropoutError
from trainer.services.tasks import Task
from .artifacts import MODEL_FILENAME, write_model
from .client_agent import ClientAgent, WallTiming
from .errors import QuorumNotMetError
from .server import FederationResult, FederationServer, MetricsSink
from .simulation import MAX_ROUND_ATTEMPTS

logger = logging.getLogger(__name__)

AGENT_POLL_SEC = 0.05
_NUMBERED_NAME = re.compile(r"^client-(\d+)$")


class DeploymentAgent:
    """
    Answers endpoint commands on the agent thread. GET_MODEL returns None
    while the caller has nothing to do, which the endpoint turns into a
    long poll.
    """

    def __init__(self, server: FederationServer, clock=None):
        self.server = server
        self.config = server.config
        self.clock = clock or server.clock
        self.names: Dict[str, int] = {}
        self.waiting: Set[int] = set()
        self.done_sent: Set[int] = set()
        self.deadline: Optional[float] = None
        self.error: Optional[FederationError] = None
        self.failure: Optional[ErrorMessage] = None
        self.result: Optional[FederationResult] = None
        self.stopped_at: Optional[float] = None

    # registration

    def _assign(self, name: str) -> Optional[int]:
        if name in self.names:
            return self.names[name]
        taken = set(self.names.values())
        match = _NUMBERED_NAME.match(name)
        if match and int(match.group(1)) < self.config.clients and int(match.group(1)) not in taken:
            client_id = int(match.group(1))
        else:
            free = [cid for cid in range(self.config.clients) if cid not in taken]
            if not free:
                return None
            client_id = free[0]
        self.names[name] = client_id
        logger.info("Registered %s as client %d (%d/%d)", name, client_id, len(self.names), self.config.clients)
        return client_id

    def _register(self, message: Register) -> Message:
        client_id = self._assign(message.client_name)
        if client_id is None:
            return ErrorMessage(ErrorCode.PROTOCOL, f"all {self.config.clients} client slots are taken")
        if len(self.names) == self.config.clients and not self.server.started:
            self._begin()
        return RegisterAck(client_id, self.config.digest)

    # lifecycle

    def _begin(self) -> None:
        self.server.start()
        if self.server.rounds_done:
            self._finish()
        elif self.server.is_async:
            self.waiting = set(range(self.config.clients))
        else:
            self._open_round(0)

    def _open_round(self, attempt: int) -> None:
        state = self.server.open_round(attempt)
        timeout = self.config.timing.round_timeout_sec
        self.deadline = None if timeout is None else state.round_start + timeout

    def _finish(self) -> None:
        self.deadline = None
        self.waiting.clear()
        self.result = self.server.finish()
        self.stopped_at = time.monotonic()

    def fail(self, exc: FederationError) -> None:
        code = ErrorCode.SECAGG_DROPOUT if isinstance(exc, SecAggDropoutError) else ErrorCode.INTERNAL
        logger.error("Federation failed: %s", exc)
        self.error = exc
        self.failure = ErrorMessage(code, str(exc))
        self.deadline = None
        self.stopped_at = time.monotonic()

    @property
    def complete(self) -> bool:
        if self.stopped_at is None:
            return False
        if self.failure is None:
            expected = set(self.names.values()) - self.server.terminated
            if expected <= self.done_sent:
                return True
        return time.monotonic() - self.stopped_at >= DONE_GRACE_SEC

    # requests

    def handle(self, command: Command) -> Optional[Message]:
        message = command.message
        if isinstance(message, Register):
            return self._register(message)
        if self.failure is not None:
            return self.failure
        if isinstance(message, GetModel):
            return self._get_model(command.client_id)
        if isinstance(message, UpdateMessage):
            return self._update(message)
        return ErrorMessage(ErrorCode.PROTOCOL, f"Unexpected {type(message).__name__}")

    def _get_model(self, client_id: int) -> Optional[Message]:
        if self.server.finished:
            self.done_sent.add(client_id)
            return Done(final_round=self.server.round)
        if not self.server.started:
            return None
        if self.server.is_async:
            if client_id not in self.waiting:
                return None
            self.waiting.discard(client_id)
            return self.server.async_model()
        state = self.server.round_state
        if state is None or client_id not in state.selected or client_id in state.received:
            return None
        return self.server.model_message(state)

    def _update(self, message: UpdateMessage) -> Message:
        try:
            update = message_to_update(message)
        except InvalidUpdateError as exc:
            return ErrorMessage(ErrorCode.PROTOCOL, str(exc))
        try:
            if self.server.is_async:
                self._apply_async(update)
            else:
                self._receive(update)
        except InvalidUpdateError as exc:
            logger.warning("Rejected update from client %s: %s", update.client_id, exc)
            return ErrorMessage(ErrorCode.PROTOCOL, str(exc))
        return Ack()

    def _apply_async(self, update) -> None:
        if self.server.finished:
            return
        applied, _ = self.server.apply_async(update)
        if self.server.rounds_done:
            self._finish()
        elif applied:
            self.waiting.add(update.client_id)

    def _receive(self, update) -> None:
        if self.server.finished or not self.server.receive(update):
            return
        if self.server.round_state.complete:
            self._close_round()

    def _close_round(self) -> None:
        self.server.close_round()
        if self.server.rounds_done:
            self._finish()
        else:
            self._open_round(0)

    def tick(self) -> None:
        """Enforce the round deadline: close on quorum, else retry once, else fail."""
        if self.deadline is None or self.clock.now() < self.deadline:
            return
        state = self.server.round_state
        self.server.check_secagg_dropout()
        if self.server.quorum_met():
            self._close_round()
            return
        logger.warning("Round %d attempt %d: quorum not met with %d of %d updates",
                       state.round, state.attempt, len(state.received), len(state.selected))
        if state.attempt + 1 < MAX_ROUND_ATTEMPTS:
            self._open_round(state.attempt + 1)
        else:
            raise QuorumNotMetError(f"Round {state.round}: quorum not met after {MAX_ROUND_ATTEMPTS} attempts")


def run_server(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    sink: Optional[MetricsSink] = None,
    on_listening: Optional[Callable[[int], None]] = None,
    port: Optional[int] = None,
) -> FederationResult:
    """
    Serve one experiment until every client has collected DONE, then write
    the final model. ``on_listening`` receives the bound port.
    """
    dataset, _ = build_federation_data(config)
    task = Task.from_config(config)
    clock = WallClock()
    server = FederationServer(config, build_registry(config, pooled=dataset), clock, sink, task)
    agent = DeploymentAgent(server)
    commands = CommandQueue()
    endpoint = server_endpoint(config.comm.host, config.comm.port if port is None else port,
                               commands, config.comm.auth_token)
    endpoint.start()
    if on_listening is not None:
        on_listening(endpoint.port)
    try:
        while not agent.complete:
            command = commands.get(timeout=AGENT_POLL_SEC)
            try:
                if command is not None:
                    command.future.set_result(agent.handle(command))
                if agent.failure is None:
                    agent.tick()
            except FederationError as exc:
                agent.fail(exc)
                if command is not None and not command.future.done():
                    command.future.set_result(agent.failure)
            except Exception as exc:
                if command is not None and not command.future.done():
                    command.future.set_exception(exc)
                raise
    finally:
        commands.close()
        endpoint.stop()

    if agent.error is not None:
        raise agent.error
    result = agent.result
    if out_dir is not None:
        path = write_model(Path(out_dir) / MODEL_FILENAME, result.params, result.digest)
        logger.info("Final model written to %s", path)
    return result


def run_client(config: ExperimentConfig, client_id: Optional[int] = None, proxy: Optional[ClientProxy] = None) -> int:
    """
    Register, regenerate this client's shard locally, then train on every
    model the server sends until DONE. Returns the number of rounds trained.
    """
    proxy = proxy or ClientProxy(
        config.comm.host,
        config.comm.port,
        config.comm.auth_token,
        config.digest,
        client_name=client_name_for(client_id),
    )
    assigned = proxy.register()
    registry = build_registry(config)
    registry.freeze()
    agent = ClientAgent(config, assigned, client_data_for(config, assigned), registry, timing=WallTiming())
    trained = 0
    try:
        while True:
            message = proxy.fetch_model()
            if isinstance(message, Done):
                logger.info("Client %d: federation finished at round %d", assigned, message.final_round)
                break
            proxy.submit_update(agent.handle_model(message))
            trained += 1
            if agent.terminated:
                logger.info("Client %d: instance terminated itself after round %d", assigned, message.round)
                break
    finally:
        proxy.close()
    return trained
