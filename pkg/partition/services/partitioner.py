"""
Non-IID partitioning of a dataset across simulated clients
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from core.exceptions import FederationError
from core.experiment import ExperimentConfig, PartitionScheme
from core.services.seeding import Domain, stream
from .datasets import ClientData, Dataset, make_blobs, split_train_test

logger = logging.getLogger(__name__)


class PartitionError(FederationError):
    """Exception for partitions that cannot be built"""
    pass


@dataclass(frozen=True)
class PartitionPlan:
    """m disjoint, non-empty index lists covering [0, n)."""
    assignments: Tuple[Tuple[int, ...], ...]
    scheme: PartitionScheme
    params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    @property
    def m(self) -> int:
        return len(self.assignments)

    def sizes(self) -> List[int]:
        return [len(indices) for indices in self.assignments]


def _repair_empty(lists: List[List[int]]) -> List[List[int]]:
    """Move one index at a time from the largest client to each empty one."""
    while True:
        empty = [i for i, indices in enumerate(lists) if not indices]
        if not empty:
            return lists
        largest = max(range(len(lists)), key=lambda i: (len(lists[i]), -i))
        lists[empty[0]].append(lists[largest].pop())


def _iid(dataset: Dataset, m: int, rng) -> List[List[int]]:
    order = rng.shuffle(range(dataset.n))
    return [list(order[i::m]) for i in range(m)]


def _dirichlet(dataset: Dataset, m: int, alpha: float, rng) -> List[List[int]]:
    lists: List[List[int]] = [[] for _ in range(m)]
    for c in range(dataset.n_classes):
        members = rng.shuffle(np.flatnonzero(dataset.labels == c).tolist())
        if not members:
            continue
        proportions = rng.dirichlet([alpha] * m)
        cuts = np.floor(np.cumsum(proportions) * len(members)).astype(np.int64)
        cuts[-1] = len(members)
        start = 0
        for client, stop in enumerate(cuts):
            stop = max(int(stop), start)
            lists[client].extend(members[start:stop])
            start = stop
    return lists


def _shards(dataset: Dataset, m: int, shards_per_client: int, rng) -> List[List[int]]:
    total_shards = m * shards_per_client
    if total_shards > dataset.n:
        raise PartitionError(
            f"Cannot cut {dataset.n} samples into {total_shards} shards"
        )
    by_label = np.lexsort((np.arange(dataset.n), dataset.labels))
    shards = np.array_split(by_label, total_shards)
    order = rng.permutation(total_shards)
    lists = []
    for client in range(m):
        picked = order[client * shards_per_client:(client + 1) * shards_per_client]
        lists.append([int(i) for s in picked for i in shards[s]])
    return lists


def partition(
    dataset: Dataset,
    m: int,
    scheme: PartitionScheme,
    params: Optional[Mapping[str, float]] = None,
    seed: int = 0,
) -> PartitionPlan:
    """
    Split ``dataset`` among ``m`` clients with the given scheme.
    """
    params = dict(params or {})
    scheme = PartitionScheme(scheme)
    if m < 1:
        raise PartitionError("Need at least one client")
    if m > dataset.n:
        raise PartitionError(f"Cannot give {m} clients a sample each from {dataset.n} samples")

    rng = stream(seed, Domain.PARTITION)
    if scheme is PartitionScheme.IID:
        lists = _iid(dataset, m, rng)
    elif scheme is PartitionScheme.DIRICHLET:
        lists = _dirichlet(dataset, m, float(params.get("dirichlet_alpha", 0.5)), rng)
    else:
        lists = _shards(dataset, m, int(params.get("shards_per_client", 2)), rng)

    lists = _repair_empty(lists)
    plan = PartitionPlan(
        assignments=tuple(tuple(sorted(int(i) for i in indices)) for indices in lists),
        scheme=scheme,
        params=params,
        seed=seed,
    )
    logger.debug("Partition %s sizes %s", scheme.value, plan.sizes())
    return plan


def build_federation_data(config: ExperimentConfig) -> Tuple[Dataset, PartitionPlan]:
    """
    Regenerate the pooled dataset and its partition from the config alone.
    """
    task = config.task
    dataset = make_blobs(task.n_per_class, task.n_classes, task.feature_dim, task.class_sep, config.seed)
    plan = partition(
        dataset,
        config.clients,
        config.partition.scheme,
        {
            "dirichlet_alpha": config.partition.dirichlet_alpha,
            "shards_per_client": config.partition.shards_per_client,
        },
        config.seed,
    )
    return dataset, plan


def client_data_for(config: ExperimentConfig, client_id: int) -> ClientData:
    """
    The train/test data a client holds; every process derives the same shard.
    """
    dataset, plan = build_federation_data(config)
    return client_data_from_plan(config, dataset, plan, client_id)


def client_data_from_plan(
    config: ExperimentConfig, dataset: Dataset, plan: PartitionPlan, client_id: int
) -> ClientData:
    shard = dataset.subset(plan.assignments[client_id])
    return split_train_test(shard, config.seed, client_id)


def all_client_data(config: ExperimentConfig) -> Tuple[Dataset, Dict[int, ClientData]]:
    dataset, plan = build_federation_data(config)
    return dataset, {
        cid: client_data_from_plan(config, dataset, plan, cid) for cid in range(config.clients)
    }
