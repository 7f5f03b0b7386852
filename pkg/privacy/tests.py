import math

import numpy as np
from django.test import SimpleTestCase

from aggregation.services.strategies import fedavg
from core.services.seeding import SplitMix64
from core.services.vectors import l2_norm
from core.testing import make_config
from core.types import LocalUpdate, as_parameter_vector
from .services.dp import PrivacyError, add_noise, clip, gaussian_sigma
from .services.pipeline import privatize_update
from .services.secagg import (
    MaskSeedTable,
    SecAggDropoutError,
    fp_decode,
    fp_encode,
    mask_payload,
    mask_seed,
    pairwise_mask,
    secagg_aggregate,
)

SCALE = 1 << 20


def _plain(client_id, values, n, round_index=0):
    return LocalUpdate(client_id=client_id, round=round_index, sample_count=n, payload=as_parameter_vector(values))


def _masked(plain, participants, table, scale=SCALE):
    payload = mask_payload(plain.payload, plain.sample_count, plain.client_id, participants, plain.round, table, scale)
    return LocalUpdate(
        client_id=plain.client_id,
        round=plain.round,
        sample_count=plain.sample_count,
        payload=payload,
        masked=True,
    )


class ClipTests(SimpleTestCase):
    def test_inside_ball_unchanged(self):
        x = as_parameter_vector([0.3, 0.4])
        self.assertIs(clip(x, 1.0), x)

    def test_scaled_onto_sphere(self):
        self.assertEqual(clip(as_parameter_vector([3, 4]), 2.5).tolist(), [1.5, 2.0])

    def test_zero_vector(self):
        self.assertEqual(clip(as_parameter_vector([0, 0, 0]), 0.1).tolist(), [0.0, 0.0, 0.0])

    def test_bound_holds_for_random_vectors(self):
        rng = SplitMix64(3)
        for _ in range(10_000):
            x = as_parameter_vector(rng.normal(8) * 10 * rng.uniform())
            bound = 0.01 + rng.uniform()
            self.assertLessEqual(l2_norm(clip(x, bound)), bound + 1e-9)

    def test_non_positive_bound(self):
        with self.assertRaises(PrivacyError):
            clip(as_parameter_vector([1.0]), 0.0)


class GaussianMechanismTests(SimpleTestCase):
    def test_reference_sigma(self):
        self.assertAlmostEqual(gaussian_sigma(1, 1, 1e-5), 4.8448, delta=1e-4)

    def test_homogeneity(self):
        base = gaussian_sigma(1.0, 1.0, 1e-5)
        self.assertAlmostEqual(gaussian_sigma(1.0, 2.0, 1e-5), base / 2)
        self.assertAlmostEqual(gaussian_sigma(3.0, 1.0, 1e-5), base * 3)

    def test_out_of_range(self):
        for args in ((0, 1, 1e-5), (1, 0, 1e-5), (1, 1, 0), (1, 1, 1)):
            with self.subTest(args=args), self.assertRaises(PrivacyError):
                gaussian_sigma(*args)

    def test_zero_sigma_is_identity(self):
        x = as_parameter_vector([1.0, -2.0])
        self.assertIs(add_noise(x, 0.0, seed=1), x)

    def test_same_seed_same_noise(self):
        x = as_parameter_vector(np.zeros(16))
        self.assertEqual(add_noise(x, 1.0, 9).tobytes(), add_noise(x, 1.0, 9).tobytes())
        self.assertNotEqual(add_noise(x, 1.0, 9).tobytes(), add_noise(x, 1.0, 10).tobytes())

    def test_noise_statistics(self):
        """1e5 draws at sigma=2: std within 2%, mean within 0.02"""
        noise = add_noise(as_parameter_vector(np.zeros(100_000)), 2.0, seed=2024)
        self.assertLess(abs(noise.std() - 2.0), 0.04)
        self.assertLess(abs(noise.mean()), 0.02)


class FixedPointTests(SimpleTestCase):
    def test_zero(self):
        residues = fp_encode(as_parameter_vector([0.0]), 100)
        self.assertEqual(int(residues[0]), 0)
        self.assertEqual(fp_decode(residues, 100).tolist(), [0.0])

    def test_positive(self):
        self.assertEqual(int(fp_encode(as_parameter_vector([1.5]), 100)[0]), 150)

    def test_negative_wraps(self):
        residues = fp_encode(as_parameter_vector([-1.5]), 100)
        self.assertEqual(int(residues[0]), 2 ** 64 - 150)
        self.assertEqual(fp_decode(residues, 100, 1).tolist(), [-1.5])

    def test_round_half_to_even(self):
        residues = fp_encode(as_parameter_vector([0.5, 1.5, 2.5]), 1)
        self.assertEqual([int(r) for r in residues], [0, 2, 2])


class MaskTests(SimpleTestCase):
    def setUp(self):
        self.table = MaskSeedTable("test-token")

    def test_seed_symmetry(self):
        self.assertEqual(mask_seed("tok", 2, 9), mask_seed("tok", 9, 2))
        self.assertNotEqual(mask_seed("tok", 2, 9), mask_seed("other", 2, 9))
        self.assertEqual(self.table.seed(4, 1), self.table.seed(1, 4))

    def test_single_client_has_zero_mask(self):
        self.assertEqual(pairwise_mask(0, [0], 3, self.table, 4).tolist(), [0, 0, 0, 0])

    def test_two_clients_antisymmetric(self):
        m0 = pairwise_mask(0, [0, 1], 2, self.table, 6)
        m1 = pairwise_mask(1, [0, 1], 2, self.table, 6)
        self.assertTrue(np.all(m0 + m1 == 0))
        self.assertTrue(np.any(m0 != 0))

    def test_masks_cancel_exactly(self):
        for n in range(2, 17):
            ids = list(range(n))
            for dim in (1, 5, 1000):
                total = np.zeros(dim, dtype=np.uint64)
                for cid in ids:
                    total += pairwise_mask(cid, ids, 7, self.table, dim)
                with self.subTest(n=n, dim=dim):
                    self.assertTrue(np.all(total == 0))

    def test_round_changes_mask(self):
        a = pairwise_mask(0, [0, 1, 2], 0, self.table, 5)
        b = pairwise_mask(0, [0, 1, 2], 1, self.table, 5)
        self.assertFalse(np.array_equal(a, b))

    def test_unknown_client(self):
        with self.assertRaises(PrivacyError):
            pairwise_mask(5, [0, 1], 0, self.table, 3)


class SecAggAggregateTests(SimpleTestCase):
    def setUp(self):
        self.table = MaskSeedTable("test-token")

    def test_matches_fedavg_within_quantization(self):
        rng = SplitMix64(17)
        ids = [0, 1, 2, 3, 4]
        plains = [_plain(cid, rng.normal(20), 1 + rng.below(40)) for cid in ids]
        masked = [_masked(update, ids, self.table) for update in plains]
        total_n = sum(update.sample_count for update in plains)
        bound = (len(ids) + 1) / (SCALE * total_n)
        difference = np.max(np.abs(secagg_aggregate(masked, ids, SCALE) - fedavg(plains)))
        self.assertLessEqual(difference, bound)

    def test_equal_updates(self):
        values = [0.25, -3.0, 1.0 / 3.0]
        plains = [_plain(0, values, 5), _plain(1, values, 5)]
        masked = [_masked(update, [0, 1], self.table) for update in plains]
        np.testing.assert_allclose(secagg_aggregate(masked, [0, 1], SCALE), values, atol=1.0 / SCALE)

    def test_individual_payload_hides_update(self):
        plain = _plain(0, [1.0, 2.0], 3)
        masked = _masked(plain, [0, 1], self.table)
        self.assertNotEqual(int(masked.payload[-1]), 3)

    def test_dropout(self):
        plains = [_plain(cid, [1.0], 2) for cid in range(3)]
        masked = [_masked(update, [0, 1, 2], self.table) for update in plains[:2]]
        with self.assertRaisesMessage(SecAggDropoutError, "secagg dropout"):
            secagg_aggregate(masked, [0, 1, 2], SCALE)

    def test_rejects_plain_payloads(self):
        with self.assertRaises(PrivacyError):
            secagg_aggregate([_plain(0, [1.0], 1)], [0], SCALE)


class PipelineTests(SimpleTestCase):
    def setUp(self):
        self.global_params = as_parameter_vector(np.zeros(4))
        self.update = _plain(1, [3.0, 4.0, 0.0, 0.0], 10, round_index=2)

    def test_disabled_is_identity(self):
        config = make_config()
        self.assertIs(privatize_update(config, self.update, self.global_params, [0, 1]), self.update)

    def test_dp_clips_and_noises_delta(self):
        config = make_config(dp={"enabled": True, "clip": 1.0, "epsilon": 1e6, "delta": 1e-5})
        result = privatize_update(config, self.update, self.global_params, [0, 1])
        self.assertFalse(result.masked)
        sigma = gaussian_sigma(1.0, 1e6, 1e-5)
        self.assertLess(abs(l2_norm(result.payload) - 1.0), 10 * sigma * math.sqrt(4))
        again = privatize_update(config, self.update, self.global_params, [0, 1])
        self.assertEqual(result.payload.tobytes(), again.payload.tobytes())

    def test_secagg_masks_payload(self):
        config = make_config(secagg={"enabled": True})
        result = privatize_update(config, self.update, self.global_params, [0, 1])
        self.assertTrue(result.masked)
        self.assertEqual(result.dim, self.update.dim + 1)
        self.assertEqual(result.sample_count, 10)
