"""
Synthetic classification data and per-client shards
"""
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.exceptions import FederationError
from core.services.seeding import Domain, SplitMix64, domain_seed, stream
from flkernel.config import TEST_SPLIT_FRACTION


class DatasetError(FederationError):
    """Exception for malformed datasets"""
    pass


@dataclass(frozen=True)
class Dataset:
    """n x d float64 features with integer labels in [0, k)."""
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError("features row count must equal label count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx].copy(),
            labels=self.labels[idx].copy(),
            n_classes=self.n_classes,
        )

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class ClientData:
    """A client's shard split into train and test parts."""
    train: Dataset
    test: Dataset


def make_blobs(n_per_class: int, k: int, d: int, class_sep: float, seed: int) -> Dataset:
    """
    Gaussian blobs: class c is centred at class_sep * e_(c mod d) with unit
    covariance. Rows are ordered class-major, then by draw order.
    """
    rng = stream(seed, Domain.DATA)
    features = np.empty((n_per_class * k, d), dtype=np.float64)
    labels = np.repeat(np.arange(k, dtype=np.int64), n_per_class)
    for c in range(k):
        center = np.zeros(d, dtype=np.float64)
        center[c % d] = class_sep
        noise = rng.normal(n_per_class * d).reshape(n_per_class, d)
        features[c * n_per_class:(c + 1) * n_per_class] = center + noise
    return Dataset(features=features, labels=labels, n_classes=k)


def split_train_test(shard: Dataset, seed: int, client_id: int) -> ClientData:
    """
    Seeded 80/20 split of a client shard. The train part always keeps at
    least one sample.
    """
    n_test = math.floor(shard.n * TEST_SPLIT_FRACTION)
    order = SplitMix64(domain_seed(seed, Domain.SPLIT, client_id)).permutation(shard.n)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return ClientData(train=shard.subset(train_idx), test=shard.subset(test_idx))
