"""
Server communicator: a threaded TCP endpoint that authenticates clients,
decodes their requests and hands them to the server agent.

The endpoint holds no federation logic. Every decoded request becomes a
command on a queue that the agent drains on its own thread, so the agent is
the only writer of federation state.
"""
import hmac
import logging
import queue
import socket
import socketserver
import threading
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Optional, Tuple

from flkernel.config import LONG_POLL_INTERVAL_SEC
from .codec import (
    DecodeError,
    ErrorCode,
    ErrorMessage,
    GetModel,
    Message,
    ProtocolError,
    Register,
    RegisterAck,
    UpdateMessage,
)
from .framing import ConnectionClosedError, read_message, send_message

logger = logging.getLogger(__name__)


class AgentUnavailableError(ProtocolError):
    """Exception for requests arriving after the agent stopped"""
    pass


@dataclass
class Command:
    message: Message
    client_id: Optional[int]
    future: Future


class CommandQueue:
    """
    Serialized hand-off from connection threads to the agent thread. A
    GET_MODEL answered with ``None`` means "not ready yet".
    """

    def __init__(self):
        self._queue: "queue.Queue[Command]" = queue.Queue()
        self._closed = threading.Event()

    def call(self, message: Message, client_id: Optional[int] = None) -> Optional[Message]:
        if self._closed.is_set():
            raise AgentUnavailableError("Server agent has stopped")
        future: Future = Future()
        self._queue.put(Command(message, client_id, future))
        return future.result()

    def get(self, timeout: Optional[float] = None) -> Optional[Command]:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed.set()
        while True:
            try:
                command = self._queue.get_nowait()
            except queue.Empty:
                return
            command.future.set_exception(AgentUnavailableError("Server agent has stopped"))

    @property
    def closed(self) -> bool:
        return self._closed.is_set()


class FederationRequestHandler(socketserver.BaseRequestHandler):
    """Per-connection request/response loop."""

    def setup(self):
        self.client_id: Optional[int] = None
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        peer = "%s:%s" % self.client_address[:2]
        while not self.server.stopping.is_set():
            try:
                message = read_message(self.request)
            except (ConnectionClosedError, OSError):
                return
            except DecodeError as exc:
                logger.warning("Undecodable frame from %s: %s", peer, exc)
                self._reply(ErrorMessage(ErrorCode.PROTOCOL, str(exc)))
                return
            response, keep_open = self._dispatch(message)
            if response is None:
                return
            self._reply(response)
            if not keep_open:
                return

    def _reply(self, message: Message) -> None:
        try:
            send_message(self.request, message)
        except OSError:
            logger.debug("Could not deliver %s to %s", type(message).__name__, self.client_address)

    def _dispatch(self, message: Message) -> Tuple[Optional[Message], bool]:
        if isinstance(message, Register):
            return self._register(message)
        if self.client_id is None:
            return ErrorMessage(ErrorCode.PROTOCOL, "REGISTER required before any other request"), False
        if isinstance(message, GetModel):
            if message.client_id != self.client_id:
                return ErrorMessage(ErrorCode.PROTOCOL, "client_id does not match the registration"), False
            return self._long_poll(message), True
        if isinstance(message, UpdateMessage):
            if message.client_id != self.client_id:
                return ErrorMessage(ErrorCode.PROTOCOL, "client_id does not match the registration"), False
            return self._forward(message)
        return ErrorMessage(ErrorCode.PROTOCOL, f"Unexpected {type(message).__name__} from a client"), False

    def _register(self, message: Register) -> Tuple[Message, bool]:
        expected = self.server.auth_token.encode("utf-8")
        if not hmac.compare_digest(message.auth_token.encode("utf-8"), expected):
            logger.warning("Rejected registration from %s: bad token", self.client_address)
            return ErrorMessage(ErrorCode.AUTH, "authentication failed"), False
        response, keep_open = self._forward(message)
        if isinstance(response, RegisterAck):
            self.client_id = response.client_id
        return response, keep_open

    def _forward(self, message: Message) -> Tuple[Message, bool]:
        try:
            response = self.server.commands.call(message, self.client_id)
        except AgentUnavailableError as exc:
            return ErrorMessage(ErrorCode.INTERNAL, str(exc)), False
        except Exception as exc:
            logger.exception("Server agent failed on %s", type(message).__name__)
            return ErrorMessage(ErrorCode.INTERNAL, str(exc)), False
        if response is None:
            return ErrorMessage(ErrorCode.INTERNAL, "no response from server agent"), False
        return response, not isinstance(response, ErrorMessage)

    def _long_poll(self, message: GetModel) -> Optional[Message]:
        """Re-ask the agent every LONG_POLL_INTERVAL_SEC until it has an answer."""
        while True:
            try:
                response = self.server.commands.call(message, self.client_id)
            except AgentUnavailableError as exc:
                return ErrorMessage(ErrorCode.INTERNAL, str(exc))
            except Exception as exc:
                logger.exception("Server agent failed on GET_MODEL")
                return ErrorMessage(ErrorCode.INTERNAL, str(exc))
            if response is not None:
                return response
            if self.server.stopping.wait(LONG_POLL_INTERVAL_SEC):
                return None


class FederationTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: Tuple[str, int], commands: CommandQueue, auth_token: str):
        self.commands = commands
        self.auth_token = auth_token
        self.stopping = threading.Event()
        super().__init__(address, FederationRequestHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="flk-endpoint", daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.stopping.set()
        self.shutdown()
        self.server_close()


def server_endpoint(host: str, port: int, commands: CommandQueue, auth_token: str) -> FederationTCPServer:
    """Bind the endpoint; call ``start()`` to begin accepting connections."""
    server = FederationTCPServer((host, port), commands, auth_token)
    logger.info("Server endpoint listening on %s:%s", host, server.port)
    return server
