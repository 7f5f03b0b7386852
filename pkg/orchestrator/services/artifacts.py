"""
FLMD final model file: magic, u32 version, u64 dim, dim x f64 LE, then the
32-byte config digest
"""
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from core.types import ParameterVector, as_parameter_vector
from flkernel.config import MODEL_MAGIC, MODEL_VERSION
from .errors import OrchestrationError

_HEADER = struct.Struct("<4sIQ")
_DIGEST_SIZE = 32

MODEL_FILENAME = "model.flmd"
METRICS_FILENAME = "metrics.jsonl"


class ArtifactError(OrchestrationError):
    """Exception for unreadable model files"""
    pass


def encode_model(params: ParameterVector, digest: bytes) -> bytes:
    if len(digest) != _DIGEST_SIZE:
        raise ArtifactError(f"Config digest must be {_DIGEST_SIZE} bytes")
    values = np.asarray(params, dtype="<f8")
    return _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, values.size) + values.tobytes() + bytes(digest)


def decode_model(data: bytes) -> Tuple[ParameterVector, bytes]:
    if len(data) < _HEADER.size:
        raise ArtifactError("Truncated FLMD header")
    magic, version, dim = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ArtifactError("Not an FLMD version 1 file")
    expected = _HEADER.size + dim * 8 + _DIGEST_SIZE
    if len(data) != expected:
        raise ArtifactError(f"FLMD file is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", count=dim, offset=_HEADER.size)
    return as_parameter_vector(values), data[-_DIGEST_SIZE:]


def write_model(path: Union[str, Path], params: ParameterVector, digest: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(params, digest))
    return path


def read_model(path: Union[str, Path]) -> Tuple[ParameterVector, bytes]:
    return decode_model(Path(path).read_bytes())
