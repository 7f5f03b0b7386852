"""
FLDS binary export of per-client datasets
"""
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from core.experiment import ExperimentConfig
from flkernel.config import DATASET_MAGIC, DATASET_VERSION
from .datasets import Dataset, DatasetError
from .partitioner import build_federation_data

_HEADER = struct.Struct("<4sIQQQ")


def encode_dataset(dataset: Dataset) -> bytes:
    """magic, u32 version, u64 n, u64 d, u64 k, f64 features, u32 labels"""
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, dataset.n, dataset.d, dataset.n_classes)
    features = np.ascontiguousarray(dataset.features, dtype="<f8").tobytes()
    labels = dataset.labels.astype("<u4").tobytes()
    return header + features + labels


def decode_dataset(data: bytes) -> Dataset:
    if len(data) < _HEADER.size:
        raise DatasetError("Truncated FLDS header")
    magic, version, n, d, k = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise DatasetError("Not an FLDS version 1 file")
    expected = _HEADER.size + n * d * 8 + n * 4
    if len(data) != expected:
        raise DatasetError(f"FLDS body is {len(data)} bytes, expected {expected}")
    features = np.frombuffer(data, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=_HEADER.size + n * d * 8)
    return Dataset(
        features=features.astype(np.float64),
        labels=labels.astype(np.int64),
        n_classes=int(k),
    )


def export_partitions(config: ExperimentConfig, out_dir: Union[str, Path]) -> List[Path]:
    """
    Write one FLDS file per client holding that client's full shard.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, plan = build_federation_data(config)
    paths = []
    for client_id, indices in enumerate(plan.assignments):
        path = out_dir / f"client_{client_id}.flds"
        path.write_bytes(encode_dataset(dataset.subset(indices)))
        paths.append(path)
    return paths
