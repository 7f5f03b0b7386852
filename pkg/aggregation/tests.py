import numpy as np
from django.test import SimpleTestCase

from core.experiment import TaskKind
from core.services.seeding import SplitMix64
from core.types import LocalUpdate, as_parameter_vector
from partition.services.datasets import make_blobs
from trainer.services.local_training import local_train
from trainer.services.tasks import Task, initial_params
from .services.selection import select_clients
from .services.speed import ClientSpeedStats, estimate_round_eta, observe_duration
from .services.strategies import (
    AggregationError,
    FutureUpdateError,
    async_apply,
    fedavg,
    staleness_weight,
)


def _update(client_id, values, n=1, round_index=0):
    return LocalUpdate(
        client_id=client_id,
        round=round_index,
        sample_count=n,
        payload=as_parameter_vector(values),
    )


class FedAvgTests(SimpleTestCase):
    def test_equal_weights_give_mean(self):
        result = fedavg([_update(0, [1, 2]), _update(1, [3, 6])])
        self.assertEqual(result.tolist(), [2.0, 4.0])

    def test_hand_weighted_mean(self):
        """n=[1,3], w=[0],[4] -> (0*1 + 4*3)/4 = 3"""
        result = fedavg([_update(0, [0], n=1), _update(1, [4], n=3)])
        self.assertEqual(result.tolist(), [3.0])

    def test_single_update_is_exact(self):
        values = [0.1, -0.0, 7.25]
        result = fedavg([_update(3, values, n=17)])
        self.assertEqual(result.tobytes(), as_parameter_vector(values).tobytes())

    def test_permutation_invariant(self):
        rng = SplitMix64(12)
        updates = [_update(cid, rng.normal(9), n=1 + rng.below(50)) for cid in range(6)]
        expected = fedavg(updates).tobytes()
        for _ in range(10):
            shuffled = rng.shuffle(updates)
            self.assertEqual(fedavg(shuffled).tobytes(), expected)

    def test_errors(self):
        with self.assertRaises(AggregationError):
            fedavg([])
        with self.assertRaises(AggregationError):
            fedavg([_update(0, [1]), _update(1, [1], round_index=1)])
        with self.assertRaises(Exception):
            fedavg([_update(0, [1]), _update(1, [1, 2])])

    def test_one_client_equals_local_training(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        data = make_blobs(10, 2, 2, 2.0, seed=1)
        update = local_train(task, initial_params(task, 1), data, 3, 4, 0.1, 0.0, seed=1)
        self.assertEqual(fedavg([update]).tobytes(), update.payload.tobytes())


class AsyncApplyTests(SimpleTestCase):
    def setUp(self):
        self.global_params = as_parameter_vector([0.0, 4.0])
        self.update_params = as_parameter_vector([8.0, 0.0])

    def test_zero_staleness_uses_alpha(self):
        self.assertEqual(staleness_weight(5, 5, 0.6, 2.0), 0.6)
        result = async_apply(self.global_params, self.update_params, 5, 5, 0.5, 1.0)
        self.assertEqual(result.tolist(), [4.0, 2.0])

    def test_exponent_zero_ignores_staleness(self):
        self.assertEqual(staleness_weight(9, 1, 0.3, 0.0), 0.3)

    def test_hand_computed_staleness(self):
        """t - tau = 3, a = 1: s = 0.25, weight = alpha * 0.25"""
        result = async_apply(self.global_params, self.update_params, 3, 0, 0.8, 1.0)
        weight = 0.8 * 0.25
        np.testing.assert_allclose(result, [weight * 8.0, (1 - weight) * 4.0])

    def test_weight_strictly_decreasing(self):
        weights = [staleness_weight(10, tau, 0.9, 0.5) for tau in range(10, -1, -1)]
        for newer, older in zip(weights, weights[1:]):
            self.assertGreater(newer, older)

    def test_future_update_rejected(self):
        with self.assertRaises(FutureUpdateError):
            async_apply(self.global_params, self.update_params, 2, 3, 0.5, 1.0)

    def test_convex_combination(self):
        rng = SplitMix64(5)
        for _ in range(200):
            g = as_parameter_vector(rng.normal(4))
            u = as_parameter_vector(rng.normal(4))
            tau = rng.below(5)
            result = async_apply(g, u, tau + rng.below(5), tau, 0.1 + 0.9 * rng.uniform(), 2 * rng.uniform())
            low = np.minimum(g, u) - 1e-12
            high = np.maximum(g, u) + 1e-12
            self.assertTrue(np.all((result >= low) & (result <= high)))


class SelectionTests(SimpleTestCase):
    def test_full_participation(self):
        self.assertEqual(select_clients(5, 1.0, 3, seed=1), (0, 1, 2, 3, 4))

    def test_size_and_determinism(self):
        chosen = select_clients(4, 0.5, 7, seed=11)
        self.assertEqual(len(chosen), 2)
        self.assertEqual(chosen, select_clients(4, 0.5, 7, seed=11))
        self.assertEqual(list(chosen), sorted(chosen))

    def test_minimum_of_one(self):
        self.assertEqual(len(select_clients(10, 0.01, 0, seed=3)), 1)

    def test_retry_attempt_draws_fresh_sample(self):
        draws = {select_clients(20, 0.25, 4, seed=2, attempt=a) for a in range(5)}
        self.assertGreater(len(draws), 1)

    def test_uniform_participation(self):
        """f=0.25, M=8, 1000 rounds: each client picked in 15%-35% of rounds"""
        counts = np.zeros(8)
        for round_index in range(1000):
            for client in select_clients(8, 0.25, round_index, seed=99):
                counts[client] += 1
        self.assertTrue(np.all(counts >= 150) and np.all(counts <= 350))


class SpeedEstimateTests(SimpleTestCase):
    def test_first_observation(self):
        stats = observe_duration(ClientSpeedStats(), 0, 10.0)
        self.assertEqual(stats.expected_duration(0), 10.0)
        self.assertIsNone(stats.expected_duration(1))

    def test_ema(self):
        stats = observe_duration(observe_duration(ClientSpeedStats(), 0, 10.0), 0, 20.0)
        self.assertEqual(stats.expected_duration(0), 15.0)
        self.assertEqual(stats.estimates[0].observations, 2)

    def test_fixed_point(self):
        stats = observe_duration(observe_duration(ClientSpeedStats(), 0, 10.0), 0, 10.0)
        self.assertEqual(stats.expected_duration(0), 10.0)

    def test_non_positive_duration(self):
        with self.assertRaises(AggregationError):
            observe_duration(ClientSpeedStats(), 0, 0.0)

    def test_eta(self):
        stats = ClientSpeedStats()
        self.assertIsNone(estimate_round_eta(stats, [0], now=100.0))
        stats = observe_duration(stats, 0, 10.0)
        self.assertEqual(estimate_round_eta(stats, [0], now=100.0), 110.0)
        for cid, seconds in ((1, 5.0), (2, 7.0)):
            stats = observe_duration(stats, cid, seconds)
        self.assertEqual(estimate_round_eta(stats, [0, 1, 2], now=3.0), 13.0)
        self.assertIsNone(estimate_round_eta(stats, [0, 3], now=3.0))
