"""
Wire codec for the framed deployment protocol.

Frame: magic "FL" | version u8 | msg_type u8 | payload_len u64 | payload.
Integers are little-endian; floats are IEEE-754 binary64 little-endian;
embedded JSON is canonical UTF-8 behind a u32 length.
"""
import json
import math
import numbers
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Union

import numpy as np

from core.exceptions import FederationError
from core.experiment import canonical_json
from core.types import freeze
from flkernel.config import MAX_FRAME_PAYLOAD, WIRE_HEADER_SIZE, WIRE_MAGIC, WIRE_VERSION

HEADER = struct.Struct("<2sBBQ")
DIGEST_SIZE = 32


class MessageType(IntEnum):
    ERROR = 0x00
    REGISTER = 0x01
    REGISTER_ACK = 0x02
    GET_MODEL = 0x03
    MODEL = 0x04
    UPDATE = 0x05
    ACK = 0x06
    DONE = 0x07


class ErrorCode(IntEnum):
    AUTH = 1
    PROTOCOL = 2
    SECAGG_DROPOUT = 3
    INTERNAL = 4


class DecodeErrorCode(IntEnum):
    BAD_MAGIC = 1
    BAD_VERSION = 2
    UNKNOWN_TYPE = 3
    TRUNCATED = 4
    LENGTH_MISMATCH = 5
    MALFORMED_JSON = 6
    MALFORMED_PAYLOAD = 7


class ProtocolError(FederationError):
    """Base exception for wire protocol errors"""
    pass


class DecodeError(ProtocolError):
    """Exception for frames that cannot be decoded"""
    code = None


class BadMagicError(DecodeError):
    code = DecodeErrorCode.BAD_MAGIC


class BadVersionError(DecodeError):
    code = DecodeErrorCode.BAD_VERSION


class UnknownMessageTypeError(DecodeError):
    code = DecodeErrorCode.UNKNOWN_TYPE


class TruncatedFrameError(DecodeError):
    code = DecodeErrorCode.TRUNCATED


class PayloadLengthError(DecodeError):
    code = DecodeErrorCode.LENGTH_MISMATCH


class MalformedJsonError(DecodeError):
    code = DecodeErrorCode.MALFORMED_JSON


class MalformedPayloadError(DecodeError):
    code = DecodeErrorCode.MALFORMED_PAYLOAD


@dataclass(frozen=True)
class ErrorMessage:
    code: int
    text: str = ""
    msg_type = MessageType.ERROR


@dataclass(frozen=True)
class Register:
    auth_token: str
    client_name: str
    msg_type = MessageType.REGISTER


@dataclass(frozen=True)
class RegisterAck:
    client_id: int
    digest: bytes
    msg_type = MessageType.REGISTER_ACK


@dataclass(frozen=True)
class GetModel:
    client_id: int
    msg_type = MessageType.GET_MODEL


@dataclass(frozen=True, eq=False)
class ModelMessage:
    round: int
    params: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)
    msg_type = MessageType.MODEL


@dataclass(frozen=True, eq=False)
class UpdateMessage:
    client_id: int
    round: int
    sample_count: int
    masked: bool
    payload: np.ndarray
    metrics: Dict[str, float] = field(default_factory=dict)
    msg_type = MessageType.UPDATE


@dataclass(frozen=True)
class Ack:
    msg_type = MessageType.ACK


@dataclass(frozen=True)
class Done:
    final_round: int
    msg_type = MessageType.DONE


Message = Union[ErrorMessage, Register, RegisterAck, GetModel, ModelMessage, UpdateMessage, Ack, Done]


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, value: int):
        self.parts.append(struct.pack("<B", value))

    def u16(self, value: int):
        self.parts.append(struct.pack("<H", value))

    def u32(self, value: int):
        self.parts.append(struct.pack("<I", value))

    def u64(self, value: int):
        self.parts.append(struct.pack("<Q", value))

    def raw(self, data: bytes):
        self.parts.append(data)

    def text(self, value: str):
        data = value.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def json(self, document):
        data = canonical_json(document)
        self.u32(len(data))
        self.raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size > len(self.data) - self.offset:
            raise TruncatedFrameError(
                f"Payload ends {size - (len(self.data) - self.offset)} bytes early at offset {self.offset}"
            )
        chunk = bytes(self.data[self.offset:self.offset + size])
        self.offset += size
        return chunk

    def _unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def u8(self) -> int:
        return self._unpack("<B")

    def u16(self) -> int:
        return self._unpack("<H")

    def u32(self) -> int:
        return self._unpack("<I")

    def u64(self) -> int:
        return self._unpack("<Q")

    def text(self) -> str:
        data = self.take(self.u32())
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPayloadError(f"Invalid UTF-8 string: {exc}") from None

    def json(self) -> dict:
        data = self.take(self.u32())
        try:
            document = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, ValueError, RecursionError) as exc:
            raise MalformedJsonError(f"Invalid JSON: {exc}") from None
        if not isinstance(document, dict):
            raise MalformedJsonError("Embedded JSON must be an object")
        try:
            canonical = canonical_json(document)
        except ValueError as exc:
            raise MalformedJsonError(f"Invalid JSON: {exc}") from None
        if canonical != data:
            raise MalformedJsonError("Embedded JSON is not in canonical form")
        return document

    def array(self, dim: int, dtype: str) -> np.ndarray:
        if dim > MAX_FRAME_PAYLOAD // 8:
            raise TruncatedFrameError(f"Array of {dim} elements exceeds the frame")
        return np.frombuffer(self.take(dim * 8), dtype=dtype)

    def done(self):
        if self.offset != len(self.data):
            raise PayloadLengthError(f"{len(self.data) - self.offset} unread payload bytes")


def _check_metadata(document: dict, error=ProtocolError) -> dict:
    for key, value in document.items():
        if isinstance(value, bool) or not isinstance(value, (numbers.Real, str)):
            raise error(f"Metadata '{key}' must be a number or a string")
    return document


def _check_metrics(document: dict, error=ProtocolError) -> dict:
    for key, value in document.items():
        if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value):
            raise error(f"Metric '{key}' must be a finite number")
    return document


def _check_u32(name: str, value: int):
    if not 0 <= value < 1 << 32:
        raise ProtocolError(f"{name} does not fit in u32: {value}")


def _encode_payload(message: Message) -> bytes:
    out = _Writer()
    if isinstance(message, ErrorMessage):
        out.u16(message.code)
        out.text(message.text)
    elif isinstance(message, Register):
        out.text(message.auth_token)
        out.text(message.client_name)
    elif isinstance(message, RegisterAck):
        _check_u32("client_id", message.client_id)
        if len(message.digest) != DIGEST_SIZE:
            raise ProtocolError(f"Config digest must be {DIGEST_SIZE} bytes")
        out.u32(message.client_id)
        out.raw(bytes(message.digest))
    elif isinstance(message, GetModel):
        _check_u32("client_id", message.client_id)
        out.u32(message.client_id)
    elif isinstance(message, ModelMessage):
        _check_u32("round", message.round)
        params = np.asarray(message.params, dtype=np.float64)
        if params.size == 0 or not np.all(np.isfinite(params)):
            raise ProtocolError("MODEL parameters must be non-empty and finite")
        out.u32(message.round)
        out.u64(params.size)
        out.raw(params.astype("<f8").tobytes())
        out.json(_check_metadata(message.metadata))
    elif isinstance(message, UpdateMessage):
        _check_u32("client_id", message.client_id)
        _check_u32("round", message.round)
        if message.masked:
            payload = np.asarray(message.payload, dtype=np.uint64).astype("<u8")
        else:
            payload = np.asarray(message.payload, dtype=np.float64)
            if not np.all(np.isfinite(payload)):
                raise ProtocolError("UPDATE payload must be finite")
            payload = payload.astype("<f8")
        if payload.size == 0:
            raise ProtocolError("UPDATE payload must be non-empty")
        out.u32(message.client_id)
        out.u32(message.round)
        out.u64(message.sample_count)
        out.u8(1 if message.masked else 0)
        out.u64(payload.size)
        out.raw(payload.tobytes())
        out.json(_check_metrics(message.metrics))
    elif isinstance(message, Ack):
        pass
    elif isinstance(message, Done):
        _check_u32("final_round", message.final_round)
        out.u32(message.final_round)
    else:
        raise ProtocolError(f"Cannot encode {type(message).__name__}")
    return out.getvalue()


def encode_message(message: Message) -> bytes:
    try:
        payload = _encode_payload(message)
    except (struct.error, UnicodeEncodeError) as exc:
        raise ProtocolError(f"Field out of range in {type(message).__name__}: {exc}") from None
    return HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(message.msg_type), len(payload)) + payload


def decode_header(header: bytes):
    """
    Validate a frame header; returns (msg_type, payload_len).
    """
    if len(header) < WIRE_HEADER_SIZE:
        raise TruncatedFrameError(f"Frame header needs {WIRE_HEADER_SIZE} bytes, got {len(header)}")
    magic, version, msg_type, payload_len = HEADER.unpack(bytes(header[:WIRE_HEADER_SIZE]))
    if magic != WIRE_MAGIC:
        raise BadMagicError(f"Bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise BadVersionError(f"Unsupported protocol version {version}")
    try:
        kind = MessageType(msg_type)
    except ValueError:
        raise UnknownMessageTypeError(f"Unknown message type 0x{msg_type:02x}") from None
    if payload_len > MAX_FRAME_PAYLOAD:
        raise PayloadLengthError(f"Payload of {payload_len} bytes exceeds the frame limit")
    return kind, payload_len


def _decode_payload(kind: MessageType, reader: _Reader) -> Message:
    if kind is MessageType.ERROR:
        return ErrorMessage(code=reader.u16(), text=reader.text())
    if kind is MessageType.REGISTER:
        return Register(auth_token=reader.text(), client_name=reader.text())
    if kind is MessageType.REGISTER_ACK:
        return RegisterAck(client_id=reader.u32(), digest=reader.take(DIGEST_SIZE))
    if kind is MessageType.GET_MODEL:
        return GetModel(client_id=reader.u32())
    if kind is MessageType.MODEL:
        round_index = reader.u32()
        dim = reader.u64()
        params = reader.array(dim, "<f8").astype(np.float64)
        if dim == 0 or not np.all(np.isfinite(params)):
            raise MalformedPayloadError("MODEL parameters must be non-empty and finite")
        metadata = _check_metadata(reader.json(), MalformedJsonError)
        return ModelMessage(round=round_index, params=freeze(params), metadata=metadata)
    if kind is MessageType.UPDATE:
        client_id = reader.u32()
        round_index = reader.u32()
        sample_count = reader.u64()
        flag = reader.u8()
        if flag not in (0, 1):
            raise MalformedPayloadError(f"Unknown payload flag {flag}")
        dim = reader.u64()
        if flag:
            payload = reader.array(dim, "<u8").astype(np.uint64)
        else:
            payload = reader.array(dim, "<f8").astype(np.float64)
            if not np.all(np.isfinite(payload)):
                raise MalformedPayloadError("UPDATE payload must be finite")
        if dim == 0:
            raise MalformedPayloadError("UPDATE payload must be non-empty")
        metrics = _check_metrics(reader.json(), MalformedJsonError)
        return UpdateMessage(
            client_id=client_id,
            round=round_index,
            sample_count=sample_count,
            masked=bool(flag),
            payload=freeze(payload),
            metrics=metrics,
        )
    if kind is MessageType.ACK:
        return Ack()
    return Done(final_round=reader.u32())


def decode_message(data: bytes) -> Message:
    """
    Decode one complete frame. Every failure is a DecodeError subclass.
    """
    kind, payload_len = decode_header(data)
    available = len(data) - WIRE_HEADER_SIZE
    if available < payload_len:
        raise TruncatedFrameError(f"Frame declares {payload_len} payload bytes, {available} present")
    if available > payload_len:
        raise PayloadLengthError(f"Frame declares {payload_len} payload bytes, {available} present")
    reader = _Reader(data[WIRE_HEADER_SIZE:])
    message = _decode_payload(kind, reader)
    reader.done()
    return message
