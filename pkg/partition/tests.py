import tempfile

import numpy as np
from django.test import SimpleTestCase

from core.experiment import PartitionScheme
from core.services.seeding import SplitMix64
from core.testing import make_config
from .services.datasets import Dataset, make_blobs, split_train_test
from .services.export import decode_dataset, encode_dataset, export_partitions
from .services.partitioner import PartitionError, client_data_for, partition


def _total_variation(plan, dataset):
    global_hist = dataset.class_histogram() / dataset.n
    distances = []
    for indices in plan.assignments:
        hist = np.bincount(dataset.labels[list(indices)], minlength=dataset.n_classes)
        distances.append(0.5 * np.abs(hist / hist.sum() - global_hist).sum())
    return float(np.mean(distances))


class MakeBlobsTests(SimpleTestCase):
    def test_single_class(self):
        dataset = make_blobs(20, 1, 3, 2.0, seed=1)
        self.assertTrue(np.all(dataset.labels == 0))
        self.assertEqual(dataset.features.shape, (20, 3))

    def test_deterministic(self):
        a = make_blobs(30, 3, 4, 2.0, seed=11)
        b = make_blobs(30, 3, 4, 2.0, seed=11)
        self.assertEqual(a.features.tobytes(), b.features.tobytes())
        self.assertEqual(a.labels.tobytes(), b.labels.tobytes())

    def test_class_means_near_centers(self):
        """seed=7, k=2, d=2, 500 per class: means within 0.2 of the centers"""
        dataset = make_blobs(500, 2, 2, 4.0, seed=7)
        centers = {0: [4.0, 0.0], 1: [0.0, 4.0]}
        for c, center in centers.items():
            mean = dataset.features[dataset.labels == c].mean(axis=0)
            np.testing.assert_allclose(mean, center, atol=0.2)

    def test_class_major_order(self):
        dataset = make_blobs(5, 3, 2, 1.0, seed=2)
        self.assertEqual(dataset.labels.tolist(), [0] * 5 + [1] * 5 + [2] * 5)


class PartitionTests(SimpleTestCase):
    def setUp(self):
        self.dataset = make_blobs(50, 4, 3, 3.0, seed=5)

    def assertDisjointCover(self, plan, n):
        flat = [i for indices in plan.assignments for i in indices]
        self.assertEqual(len(flat), len(set(flat)))
        self.assertEqual(sorted(flat), list(range(n)))
        self.assertTrue(all(len(indices) >= 1 for indices in plan.assignments))

    def test_single_client_gets_everything(self):
        for scheme in PartitionScheme:
            plan = partition(self.dataset, 1, scheme, {"shards_per_client": 2}, seed=3)
            self.assertEqual(plan.assignments, (tuple(range(self.dataset.n)),))

    def test_disjoint_cover_property(self):
        rng = SplitMix64(2024)
        for trial in range(60):
            scheme = list(PartitionScheme)[trial % 3]
            m = 1 + rng.below(20)
            params = {
                "dirichlet_alpha": [0.05, 0.5, 5.0][rng.below(3)],
                "shards_per_client": 1 + rng.below(3),
            }
            with self.subTest(trial=trial, scheme=scheme, m=m):
                plan = partition(self.dataset, m, scheme, params, seed=rng.next_u64())
                self.assertDisjointCover(plan, self.dataset.n)

    def test_deterministic(self):
        for scheme in PartitionScheme:
            a = partition(self.dataset, 7, scheme, {"dirichlet_alpha": 0.3}, seed=9)
            b = partition(self.dataset, 7, scheme, {"dirichlet_alpha": 0.3}, seed=9)
            self.assertEqual(a.assignments, b.assignments)

    def test_too_many_clients(self):
        with self.assertRaises(PartitionError):
            partition(self.dataset, self.dataset.n + 1, PartitionScheme.IID, seed=0)

    def test_too_many_shards(self):
        with self.assertRaises(PartitionError):
            partition(self.dataset, 150, PartitionScheme.SHARDS, {"shards_per_client": 2}, seed=0)

    def test_shards_give_one_class_each(self):
        """10 balanced samples, 2 clients, 1 shard each: one class per client"""
        dataset = Dataset(
            features=np.zeros((10, 1)),
            labels=np.array([0, 1] * 5, dtype=np.int64),
            n_classes=2,
        )
        plan = partition(dataset, 2, PartitionScheme.SHARDS, {"shards_per_client": 1}, seed=4)
        for indices in plan.assignments:
            self.assertEqual(len({int(dataset.labels[i]) for i in indices}), 1)
        self.assertDisjointCover(plan, 10)

    def test_iid_is_balanced(self):
        plan = partition(self.dataset, 6, PartitionScheme.IID, seed=1)
        sizes = plan.sizes()
        self.assertLessEqual(max(sizes) - min(sizes), 1)

    def test_large_alpha_approaches_iid(self):
        """alpha=1000, m=4: class histograms within 10% of the global one"""
        dataset = make_blobs(500, 2, 2, 4.0, seed=7)
        plan = partition(dataset, 4, PartitionScheme.DIRICHLET, {"dirichlet_alpha": 1000.0}, seed=7)
        global_share = dataset.class_histogram() / dataset.n
        for indices in plan.assignments:
            hist = np.bincount(dataset.labels[list(indices)], minlength=2)
            share = hist / hist.sum()
            np.testing.assert_array_less(np.abs(share - global_share) / global_share, 0.1)

    def test_small_alpha_is_more_heterogeneous(self):
        dataset = make_blobs(60, 3, 2, 2.0, seed=1)
        low, high = [], []
        for seed in range(50):
            low.append(_total_variation(
                partition(dataset, 5, PartitionScheme.DIRICHLET, {"dirichlet_alpha": 0.1}, seed=seed), dataset))
            high.append(_total_variation(
                partition(dataset, 5, PartitionScheme.DIRICHLET, {"dirichlet_alpha": 10.0}, seed=seed), dataset))
        self.assertGreater(np.mean(low), np.mean(high))

    def test_tiny_alpha_still_non_empty(self):
        plan = partition(self.dataset, 12, PartitionScheme.DIRICHLET, {"dirichlet_alpha": 0.01}, seed=8)
        self.assertDisjointCover(plan, self.dataset.n)


class ClientDataTests(SimpleTestCase):
    def test_train_test_split_sizes(self):
        dataset = make_blobs(10, 2, 2, 1.0, seed=3)
        data = split_train_test(dataset, seed=3, client_id=0)
        self.assertEqual(data.test.n, 4)
        self.assertEqual(data.train.n, 16)

    def test_single_sample_shard_keeps_training_data(self):
        dataset = make_blobs(1, 1, 2, 1.0, seed=3)
        data = split_train_test(dataset, seed=3, client_id=0)
        self.assertEqual(data.train.n, 1)
        self.assertEqual(data.test.n, 0)

    def test_every_process_derives_the_same_shard(self):
        config = make_config()
        a = client_data_for(config, 2)
        b = client_data_for(config, 2)
        self.assertEqual(a.train.features.tobytes(), b.train.features.tobytes())
        self.assertEqual(a.test.labels.tobytes(), b.test.labels.tobytes())


class ExportTests(SimpleTestCase):
    def test_flds_layout(self):
        dataset = Dataset(
            features=np.array([[1.0, 2.0]]), labels=np.array([1]), n_classes=3
        )
        data = encode_dataset(dataset)
        self.assertEqual(data[:4], b"FLDS")
        self.assertEqual(len(data), 4 + 4 + 8 * 3 + 16 + 4)
        decoded = decode_dataset(data)
        self.assertEqual(decoded.features.tolist(), [[1.0, 2.0]])
        self.assertEqual(decoded.labels.tolist(), [1])
        self.assertEqual(decoded.n_classes, 3)

    def test_export_writes_one_file_per_client(self):
        config = make_config(clients=3)
        with tempfile.TemporaryDirectory() as tmp:
            paths = export_partitions(config, tmp)
            self.assertEqual([p.name for p in paths], ["client_0.flds", "client_1.flds", "client_2.flds"])
            total = sum(decode_dataset(p.read_bytes()).n for p in paths)
            self.assertEqual(total, config.task.total_samples)
