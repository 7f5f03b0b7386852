import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .exceptions import ConfigError, DimensionMismatchError
from .experiment import canonical_json
from .services.config_loader import load_config, validate_config
from .services.seeding import (
    GOLDEN_GAMMA,
    MASK64,
    Domain,
    SplitMix64,
    domain_seed,
    splitmix64,
    stream_seed,
)
from .services.vectors import l2_norm, vec_axpy
from .testing import make_document
from .types import LocalUpdate, InvalidUpdateError, as_parameter_vector


class VectorArithmeticTests(SimpleTestCase):
    def test_axpy_sum(self):
        """a=1 adds the vectors component-wise"""
        result = vec_axpy(1.0, as_parameter_vector([1, 2]), as_parameter_vector([3, 4]))
        self.assertEqual(result.tolist(), [4.0, 6.0])

    def test_axpy_identity_and_cancellation(self):
        """a=0 returns y; a=-1 with x=y cancels"""
        y = as_parameter_vector([3, 4])
        self.assertEqual(vec_axpy(0.0, as_parameter_vector([9, -9]), y).tolist(), [3.0, 4.0])
        ones = as_parameter_vector([1, 1])
        self.assertEqual(vec_axpy(-1.0, ones, ones).tolist(), [0.0, 0.0])

    def test_axpy_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            vec_axpy(1.0, as_parameter_vector([1]), as_parameter_vector([1, 2]))

    def test_axpy_result_is_read_only(self):
        result = vec_axpy(1.0, as_parameter_vector([1]), as_parameter_vector([1]))
        with self.assertRaises(ValueError):
            result[0] = 5.0

    def test_l2_norm(self):
        self.assertEqual(l2_norm(as_parameter_vector([3, 4])), 5.0)
        self.assertEqual(l2_norm(as_parameter_vector([0, 0, 0])), 0.0)
        self.assertEqual(l2_norm(as_parameter_vector([1, 1, 1, 1])), 2.0)

    def test_repeated_evaluation_is_bit_identical(self):
        rng = SplitMix64(3)
        x = as_parameter_vector(rng.normal(257))
        y = as_parameter_vector(rng.normal(257))
        first = vec_axpy(0.37, x, y).tobytes()
        self.assertEqual(first, vec_axpy(0.37, x, y).tobytes())
        self.assertEqual(l2_norm(x), l2_norm(x))

    def test_non_finite_values_rejected(self):
        with self.assertRaises(Exception):
            as_parameter_vector([1.0, float("nan")])


class SeedingTests(SimpleTestCase):
    def test_splitmix64_reference_values(self):
        """Published SplitMix64 outputs for a zero-seeded stream"""
        rng = SplitMix64(0)
        self.assertEqual(rng.next_u64(), 0xE220A8397B1DCDAF)
        self.assertEqual(rng.next_u64(), 0x6E789E6AA1B965F4)
        self.assertEqual(splitmix64(0), 0xE220A8397B1DCDAF)

    def test_vector_draws_match_scalar_draws(self):
        scalar = SplitMix64(1234)
        vector = SplitMix64(1234)
        expected = [scalar.next_u64() for _ in range(17)]
        self.assertEqual([int(v) for v in vector.u64_array(17)], expected)
        self.assertEqual(scalar.state, vector.state)

    def test_stream_seed_is_pure(self):
        self.assertEqual(stream_seed(42, 3, 9), stream_seed(42, 3, 9))

    def test_stream_seed_origin(self):
        """client 0, round 0 reduces to SplitMix64 applied twice"""
        self.assertEqual(stream_seed(42, 0, 0), splitmix64(splitmix64(42)))

    def test_stream_seed_formula(self):
        inner = splitmix64((5 + 3 * GOLDEN_GAMMA) & MASK64)
        self.assertEqual(stream_seed(5, 3, 11), splitmix64((inner + 11) & MASK64))

    def test_no_collisions_on_grid(self):
        seeds = {stream_seed(99, c, r) for c in range(100) for r in range(100)}
        self.assertEqual(len(seeds), 100 * 100)

    def test_domains_are_separated(self):
        base = stream_seed(1, 2, 3)
        seeds = {domain_seed(base, domain) for domain in Domain}
        self.assertEqual(len(seeds), len(Domain))

    def test_uniform_range(self):
        u = SplitMix64(8).uniform(10000)
        self.assertTrue(np.all(u >= 0.0) and np.all(u < 1.0))

    def test_shuffle_is_permutation(self):
        shuffled = SplitMix64(5).shuffle(range(50))
        self.assertEqual(sorted(shuffled), list(range(50)))
        self.assertEqual(shuffled, SplitMix64(5).shuffle(range(50)))

    def test_gamma_mean(self):
        rng = SplitMix64(17)
        for shape in (0.3, 2.5):
            draws = [rng.gamma(shape) for _ in range(4000)]
            self.assertAlmostEqual(float(np.mean(draws)), shape, delta=0.1 * shape + 0.02)

    def test_dirichlet_sums_to_one(self):
        p = SplitMix64(4).dirichlet([0.5] * 6)
        self.assertAlmostEqual(float(p.sum()), 1.0, places=12)
        self.assertTrue(np.all(p >= 0))


class ConfigValidationTests(SimpleTestCase):
    def test_client_fraction_zero_rejected(self):
        with self.assertRaisesMessage(ConfigError, "client_fraction out of range"):
            validate_config(make_document(client_fraction=0))

    def test_minimal_config_gets_defaults(self):
        config = validate_config({"seed": 1, "rounds": 2, "clients": 2})
        self.assertEqual(config.timing.quorum, "all")
        self.assertEqual(config.timing.speed_ema_beta, 0.5)
        self.assertEqual(config.aggregator.value, "fedavg")
        self.assertEqual(config.async_budget, 4)
        self.assertEqual(config.mode.value, "simulate-serial")

    def test_unknown_keys_rejected(self):
        with self.assertRaisesMessage(ConfigError, "lerning_rate"):
            validate_config(make_document(lerning_rate=0.1))
        with self.assertRaisesMessage(ConfigError, "dp.sigma"):
            validate_config(make_document(dp={"sigma": 1.0}))

    def test_range_violations_name_the_field(self):
        cases = {
            "delta out of range": make_document(dp={"delta": 1.0}),
            "async_alpha out of range": make_document(async_alpha=0),
            "batch_size out of range": make_document(batch_size=0),
            "quorum out of range": make_document(timing={"quorum": 9}),
        }
        for message, document in cases.items():
            with self.subTest(message=message):
                with self.assertRaisesMessage(ConfigError, message):
                    validate_config(document)

    def test_non_finite_numbers_rejected(self):
        cases = {
            "learning_rate": make_document(learning_rate=float("inf")),
            "client_fraction": make_document(client_fraction=float("nan")),
            "dp.clip": make_document(dp={"clip": float("-inf")}),
            "base_round_sec": make_document(cost={"base_round_sec": [1.0, float("nan"), 1.0, 1.0]}),
        }
        for field, document in cases.items():
            with self.subTest(field=field):
                with self.assertRaisesMessage(ConfigError, field):
                    validate_config(document)

    def test_load_config_with_nan_literal(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nan.json"
            path.write_text(json.dumps(make_document(learning_rate=float("nan"))))
            self.assertIn("NaN", path.read_text())
            with self.assertRaisesMessage(ConfigError, "learning_rate"):
                load_config(path)

    def test_per_client_cost_length_checked(self):
        with self.assertRaisesMessage(ConfigError, "base_round_sec"):
            validate_config(make_document(cost={"base_round_sec": [1, 2]}))

    def test_secagg_with_async_rejected(self):
        with self.assertRaises(ConfigError):
            validate_config(make_document(aggregator="async", secagg={"enabled": True}))

    def test_digest_ignores_key_order(self):
        document = make_document()
        reordered = json.loads(json.dumps(dict(reversed(list(document.items())))))
        self.assertEqual(validate_config(document).digest, validate_config(reordered).digest)
        self.assertEqual(len(validate_config(document).digest), 32)

    def test_digest_ignores_mode_and_explicit_defaults(self):
        plain = validate_config(make_document())
        explicit = validate_config(make_document(mode="server", hooks={"eval_local": True}))
        self.assertEqual(plain.digest, explicit.digest)

    def test_digest_tracks_content(self):
        self.assertNotEqual(
            validate_config(make_document(seed=1)).digest,
            validate_config(make_document(seed=2)).digest,
        )

    def test_canonical_form(self):
        self.assertEqual(canonical_json({"b": 1, "a": [0.1, 2.0]}), b'{"a":[0.1,2.0],"b":1}')

    def test_load_config_missing_file(self):
        with self.assertRaisesMessage(ConfigError, "nope.json"):
            load_config("/nonexistent/nope.json")

    def test_load_config_whitespace_independent(self):
        with tempfile.TemporaryDirectory() as tmp:
            compact = Path(tmp) / "a.json"
            pretty = Path(tmp) / "b.json"
            compact.write_text(json.dumps(make_document()))
            pretty.write_text(json.dumps(make_document(), indent=4))
            self.assertEqual(load_config(compact).digest, load_config(pretty).digest)

    def test_selected_count(self):
        config = validate_config(make_document(clients=10, client_fraction=0.25))
        self.assertEqual(config.selected_count, math.ceil(2.5))


class LocalUpdateTests(SimpleTestCase):
    def test_sample_count_must_be_positive(self):
        with self.assertRaises(InvalidUpdateError):
            LocalUpdate(client_id=0, round=0, sample_count=0, payload=np.zeros(2))

    def test_payload_representation_matches_flag(self):
        with self.assertRaises(InvalidUpdateError):
            LocalUpdate(client_id=0, round=0, sample_count=1, payload=np.zeros(2), masked=True)
        update = LocalUpdate(
            client_id=0, round=0, sample_count=1,
            payload=np.zeros(2, dtype=np.uint64), masked=True,
        )
        self.assertEqual(update.dim, 2)
