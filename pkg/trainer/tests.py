import math

import numpy as np
from django.test import SimpleTestCase

from core.experiment import TaskKind
from core.services.seeding import SplitMix64
from core.types import as_parameter_vector
from partition.services.datasets import Dataset, make_blobs
from .services.local_training import TrainingError, evaluate, local_train, loss_and_grad
from .services.tasks import Task, initial_params


def _central_difference(task, params, features, labels, step=1e-6):
    grad = np.zeros(task.dim)
    for i in range(task.dim):
        plus = np.array(params)
        minus = np.array(params)
        plus[i] += step
        minus[i] -= step
        grad[i] = (
            loss_and_grad(task, plus, features, labels)[0]
            - loss_and_grad(task, minus, features, labels)[0]
        ) / (2 * step)
    return grad


class TaskLayoutTests(SimpleTestCase):
    def test_dims(self):
        self.assertEqual(Task(TaskKind.LOGREG, d=10, k=3).dim, 33)
        self.assertEqual(Task(TaskKind.MLP, d=4, k=3, h=5).dim, 4 * 5 + 5 + 5 * 3 + 3)

    def test_initial_params(self):
        logreg = Task(TaskKind.LOGREG, d=3, k=2)
        self.assertTrue(np.all(initial_params(logreg, seed=1) == 0.0))
        mlp = Task(TaskKind.MLP, d=4, k=2, h=3)
        params = initial_params(mlp, seed=1)
        blocks = mlp.unpack(params)
        self.assertTrue(np.all(np.abs(blocks["W1"]) <= 0.5))
        self.assertTrue(np.all(blocks["b1"] == 0.0))
        self.assertEqual(params.tobytes(), initial_params(mlp, seed=1).tobytes())

    def test_wrong_dimension(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        with self.assertRaises(Exception):
            loss_and_grad(task, np.zeros(5), np.zeros((1, 2)), np.array([0]))


class GradientTests(SimpleTestCase):
    def test_zero_params_give_log_k(self):
        task = Task(TaskKind.LOGREG, d=3, k=4)
        data = make_blobs(5, 4, 3, 2.0, seed=1)
        loss, _ = loss_and_grad(task, np.zeros(task.dim), data.features, data.labels)
        self.assertAlmostEqual(loss, math.log(4), places=12)

    def test_hand_computed_binary_gradient(self):
        """x=[1], label 0, zero params: dW = [-0.5, +0.5], db = [-0.5, +0.5]"""
        task = Task(TaskKind.LOGREG, d=1, k=2)
        _, grad = loss_and_grad(task, np.zeros(4), np.array([[1.0]]), np.array([0]))
        np.testing.assert_allclose(grad, [-0.5, 0.5, -0.5, 0.5])

    def test_finite_difference_agreement(self):
        """20 random draws per task, relative error below 1e-5"""
        rng = SplitMix64(77)
        tasks = [Task(TaskKind.LOGREG, d=4, k=3), Task(TaskKind.MLP, d=4, k=3, h=5)]
        for task in tasks:
            worst = 0.0
            for _ in range(20):
                params = rng.normal(task.dim) * 0.5
                features = rng.normal(6 * task.d).reshape(6, task.d)
                labels = np.array([rng.below(task.k) for _ in range(6)])
                _, analytic = loss_and_grad(task, params, features, labels)
                numeric = _central_difference(task, params, features, labels)
                scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
                worst = max(worst, np.linalg.norm(analytic - numeric) / scale)
            with self.subTest(task=task.kind):
                self.assertLess(worst, 1e-5)

    def test_empty_batch(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        with self.assertRaises(TrainingError):
            loss_and_grad(task, np.zeros(task.dim), np.zeros((0, 2)), np.zeros(0, dtype=int))


class LocalTrainTests(SimpleTestCase):
    def setUp(self):
        self.task = Task(TaskKind.LOGREG, d=2, k=2)
        self.data = make_blobs(20, 2, 2, 3.0, seed=4)
        self.global_params = as_parameter_vector(np.full(self.task.dim, 0.1))

    def test_zero_epochs_is_identity(self):
        update = local_train(self.task, self.global_params, self.data, 0, 8, 0.1, 0.0, seed=1)
        self.assertEqual(update.payload.tobytes(), self.global_params.tobytes())
        self.assertEqual(update.sample_count, self.data.n)

    def test_full_batch_single_step(self):
        update = local_train(self.task, self.global_params, self.data, 1, self.data.n, 0.1, 0.0, seed=1)
        _, grad = loss_and_grad(self.task, self.global_params, self.data.features, self.data.labels)
        expected = self.global_params - 0.1 * grad
        self.assertEqual(update.payload.tobytes(), expected.tobytes())

    def test_deterministic(self):
        a = local_train(self.task, self.global_params, self.data, 3, 7, 0.1, 0.1, seed=5, client_id=2, round_index=4)
        b = local_train(self.task, self.global_params, self.data, 3, 7, 0.1, 0.1, seed=5, client_id=2, round_index=4)
        self.assertEqual(a.payload.tobytes(), b.payload.tobytes())
        self.assertEqual(a.train_loss, b.train_loss)

    def test_proximal_pull(self):
        """Drift from the anchor is non-increasing in mu"""
        drifts = []
        for mu in (0.0, 0.1, 1.0, 10.0):
            update = local_train(self.task, self.global_params, self.data, 3, 8, 0.05, mu, seed=2)
            drifts.append(np.linalg.norm(update.payload - self.global_params))
        for before, after in zip(drifts, drifts[1:]):
            self.assertLessEqual(after, before + 1e-12)

    def test_proximal_term_vanishes_at_anchor(self):
        """One full-batch step from the anchor ignores mu"""
        plain = local_train(self.task, self.global_params, self.data, 1, self.data.n, 0.1, 0.0, seed=3)
        prox = local_train(self.task, self.global_params, self.data, 1, self.data.n, 0.1, 5.0, seed=3)
        self.assertEqual(plain.payload.tobytes(), prox.payload.tobytes())

    def test_empty_data(self):
        empty = Dataset(features=np.zeros((0, 2)), labels=np.zeros(0, dtype=np.int64), n_classes=2)
        with self.assertRaises(TrainingError):
            local_train(self.task, self.global_params, empty, 1, 4, 0.1, 0.0, seed=1)


class EvaluateTests(SimpleTestCase):
    def test_zero_params_predict_class_zero(self):
        task = Task(TaskKind.LOGREG, d=2, k=3)
        data = make_blobs(4, 3, 2, 2.0, seed=1)
        result = evaluate(task, np.zeros(task.dim), data)
        self.assertAlmostEqual(result["loss"], math.log(3), places=12)
        self.assertAlmostEqual(result["accuracy"], 1 / 3)

    def test_converges_on_separable_blobs(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        data = make_blobs(50, 2, 2, 10.0, seed=3)
        update = local_train(task, initial_params(task, 0), data, 50, 10, 0.5, 0.0, seed=3)
        self.assertEqual(evaluate(task, update.payload, data)["accuracy"], 1.0)

    def test_pure(self):
        task = Task(TaskKind.MLP, d=2, k=2, h=3)
        data = make_blobs(10, 2, 2, 2.0, seed=2)
        params = initial_params(task, 9)
        self.assertEqual(evaluate(task, params, data), evaluate(task, params, data))

    def test_empty_dataset(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        empty = Dataset(features=np.zeros((0, 2)), labels=np.zeros(0, dtype=np.int64), n_classes=2)
        with self.assertRaises(TrainingError):
            evaluate(task, np.zeros(task.dim), empty)
