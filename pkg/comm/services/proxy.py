"""
Client communication proxy: register, fetch the model, submit updates.

The proxy keeps one connection open and retries transient connection
failures with exponential backoff. After a reconnect it registers again
under the same name, which the server answers with the same client id.
"""
import logging
import os
import socket
import time
from typing import Callable, Optional, Union

from core.exceptions import ConfigError
from flkernel.config import (
    RETRY_BASE_SEC,
    RETRY_FACTOR,
    RETRY_MAX_ATTEMPTS,
    SOCKET_TIMEOUT_SEC,
)
from .codec import (
    Ack,
    Done,
    ErrorCode,
    ErrorMessage,
    GetModel,
    Message,
    ModelMessage,
    ProtocolError,
    Register,
    RegisterAck,
    UpdateMessage,
)
from .framing import read_message, send_message

logger = logging.getLogger(__name__)


class AuthenticationError(ProtocolError):
    """Exception for a registration the server rejected"""
    pass


class ConfigMismatchError(ConfigError):
    """Exception for a server running a different experiment config"""
    pass


class RetryExhaustedError(ProtocolError):
    """Exception for a request that failed on every retry"""
    pass


class RemoteError(ProtocolError):
    """Exception for an ERROR frame sent by the server"""

    def __init__(self, code: int, text: str):
        super().__init__(f"Server error {code}: {text}")
        self.code = code
        self.text = text


def client_name_for(client_id: Optional[int]) -> str:
    """
    Registration name. Without a requested id the name is unique per process
    so a reconnect still maps to the same registration.
    """
    if client_id is None:
        return f"client@{socket.gethostname()}:{os.getpid()}"
    return f"client-{client_id}"


def backoff_delays(base: float = RETRY_BASE_SEC, factor: float = RETRY_FACTOR, attempts: int = RETRY_MAX_ATTEMPTS):
    """Sleep before each retry: base, base*factor, ... (attempts - 1 values)."""
    return [base * factor ** i for i in range(attempts - 1)]


class ClientProxy:
    def __init__(
        self,
        host: str,
        port: int,
        auth_token: str,
        expected_digest: bytes,
        client_name: str = "client",
        connect: Callable[..., socket.socket] = socket.create_connection,
        sleep: Callable[[float], None] = time.sleep,
        attempts: int = RETRY_MAX_ATTEMPTS,
    ):
        self.address = (host, port)
        self.auth_token = auth_token
        self.expected_digest = expected_digest
        self.client_name = client_name
        self.client_id: Optional[int] = None
        self.finished = False
        self._connect = connect
        self._sleep = sleep
        self._attempts = attempts
        self._sock: Optional[socket.socket] = None

    # connection handling

    def _open(self) -> socket.socket:
        sock = self._connect(self.address, timeout=SOCKET_TIMEOUT_SEC)
        # long polls may outlast any fixed timeout
        sock.settimeout(None)
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        self._sock = sock
        if self.client_id is not None:
            self._handshake()
        return sock

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def _exchange(self, message: Message) -> Message:
        sock = self._sock or self._open()
        send_message(sock, message)
        return read_message(sock)

    def _request(self, message: Message) -> Message:
        delays = backoff_delays(attempts=self._attempts)
        for attempt in range(self._attempts):
            try:
                response = self._exchange(message)
            except OSError as exc:
                self.close()
                if attempt == self._attempts - 1:
                    raise RetryExhaustedError(
                        f"{type(message).__name__} to {self.address[0]}:{self.address[1]} "
                        f"failed after {self._attempts} attempts: {exc}"
                    ) from exc
                logger.info("Connection attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delays[attempt])
                self._sleep(delays[attempt])
                continue
            if isinstance(response, ErrorMessage):
                self.close()
                if response.code == ErrorCode.AUTH:
                    raise AuthenticationError(response.text or "authentication failed")
                raise RemoteError(response.code, response.text)
            return response
        raise RetryExhaustedError("no attempts configured")

    def _handshake(self) -> None:
        send_message(self._sock, Register(self.auth_token, self.client_name))
        response = read_message(self._sock)
        if isinstance(response, ErrorMessage):
            self.close()
            if response.code == ErrorCode.AUTH:
                raise AuthenticationError(response.text or "authentication failed")
            raise RemoteError(response.code, response.text)
        self._accept(response)

    def _accept(self, response: Message) -> int:
        if not isinstance(response, RegisterAck):
            raise ProtocolError(f"Expected REGISTER_ACK, got {type(response).__name__}")
        if response.digest != self.expected_digest:
            self.close()
            raise ConfigMismatchError(
                "Config digest mismatch: the server runs a different experiment configuration"
            )
        if self.client_id is not None and response.client_id != self.client_id:
            raise ProtocolError(f"Server reassigned client id {self.client_id} to {response.client_id}")
        self.client_id = response.client_id
        return self.client_id

    # client API

    def register(self) -> int:
        return self._accept(self._request(Register(self.auth_token, self.client_name)))

    def fetch_model(self) -> Union[ModelMessage, Done]:
        """
        Block until the next model or DONE. After DONE the proxy makes no
        further requests.
        """
        if self.finished:
            raise ProtocolError("Federation already finished")
        if self.client_id is None:
            raise ProtocolError("fetch_model called before register")
        response = self._request(GetModel(self.client_id))
        if isinstance(response, Done):
            self.finished = True
            self.close()
            return response
        if not isinstance(response, ModelMessage):
            raise ProtocolError(f"Expected MODEL or DONE, got {type(response).__name__}")
        return response

    def submit_update(self, update: UpdateMessage) -> Ack:
        if self.finished:
            raise ProtocolError("Federation already finished")
        response = self._request(update)
        if not isinstance(response, Ack):
            raise ProtocolError(f"Expected ACK, got {type(response).__name__}")
        return response
