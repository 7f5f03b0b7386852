import io
import json
import tempfile
from contextlib import redirect_stderr
from pathlib import Path

from django.core.management import call_command
from django.test import SimpleTestCase

from comm.services.codec import ProtocolError
from comm.services.proxy import AuthenticationError, ConfigMismatchError
from core.exceptions import ConfigError, FederationError
from core.testing import make_document
from orchestrator.services.artifacts import read_model
from orchestrator.services.errors import QuorumNotMetError
from .main import main
from .services.errors import exit_code_for
from .services.metrics import MetricsFileError, read_metrics, summarize

FIXTURE = [
    {"ts": 1.0, "round": 0, "scope": "server", "name": "global_acc", "value": 0.5},
    {"ts": 1.0, "round": 0, "scope": "0", "name": "test_acc", "value": 0.25},
    {"ts": 1.0, "round": 0, "scope": "1", "name": "test_acc", "value": 1.0},
    {"ts": 2.0, "round": 1, "scope": "server", "name": "global_acc", "value": 0.75},
    {"ts": 2.0, "round": 1, "scope": "0", "name": "test_acc", "value": 0.75},
]


class CliTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, **overrides):
        path = self.tmp / "config.json"
        path.write_text(json.dumps(make_document(**overrides)), encoding="utf-8")
        return path

    def records(self, out):
        return list(read_metrics(out / "metrics.jsonl"))


class SimulateCommandTests(CliTestCase):
    def test_writes_model_and_metrics(self):
        out = self.tmp / "run"
        self.assertEqual(main(["simulate", "--config", str(self.write_config()), "--out", str(out)]), 0)
        params, digest = read_model(out / "model.flmd")
        self.assertEqual(params.shape, (22,))
        self.assertEqual(len(digest), 32)
        for line in (out / "metrics.jsonl").read_text().splitlines():
            self.assertEqual(set(json.loads(line)), {"ts", "round", "scope", "name", "value"})

    def test_parallel_flag_gives_same_model(self):
        config = self.write_config()
        main(["simulate", "--config", str(config), "--out", str(self.tmp / "a")])
        main(["simulate", "--config", str(config), "--parallel", "2", "--out", str(self.tmp / "b")])
        self.assertEqual((self.tmp / "a" / "model.flmd").read_bytes(), (self.tmp / "b" / "model.flmd").read_bytes())

    def test_missing_config(self):
        missing = self.tmp / "nope.json"
        stderr = io.StringIO()
        with redirect_stderr(stderr):
            code = main(["simulate", "--config", str(missing)])
        self.assertEqual(code, 1)
        self.assertIn(str(missing), stderr.getvalue())

    def test_invalid_config(self):
        stderr = io.StringIO()
        with redirect_stderr(stderr):
            code = main(["simulate", "--config", str(self.write_config(client_fraction=2.0))])
        self.assertEqual(code, 1)
        self.assertIn("client_fraction out of range", stderr.getvalue())

    def test_infinite_number_is_a_config_error(self):
        stderr = io.StringIO()
        with redirect_stderr(stderr):
            code = main(["simulate", "--config", str(self.write_config(learning_rate=float("inf")))])
        self.assertEqual(code, 1)
        self.assertIn("learning_rate", stderr.getvalue())

    def test_zero_rounds_gives_empty_file(self):
        out = self.tmp / "run"
        self.assertEqual(main(["simulate", "--config", str(self.write_config(rounds=0)), "--out", str(out)]), 0)
        self.assertEqual((out / "metrics.jsonl").read_bytes(), b"")

    def test_eval_local_record_counts(self):
        out = self.tmp / "run"
        call_command("simulate", "--config", str(self.write_config(clients=2, rounds=3, partition={"scheme": "iid"})),
                     "--out", str(out), stdout=io.StringIO())
        names = [r["name"] for r in self.records(out)]
        self.assertEqual(names.count("test_acc"), 6)
        self.assertEqual(names.count("test_loss"), 6)
        self.assertEqual(names.count("round_duration"), 3)

    def test_cost_total_per_client(self):
        out = self.tmp / "run"
        config = self.write_config(cost={"base_round_sec": [1.0, 1.0, 1.0, 10.0]}, hooks={"cost_shutdown": True})
        call_command("simulate", "--config", str(config), "--out", str(out), stdout=io.StringIO())
        costs = [r for r in self.records(out) if r["name"] == "cost_total"]
        self.assertEqual(sorted(r["scope"] for r in costs), ["0", "1", "2", "3"])
        self.assertTrue(all(r["round"] == 4 for r in costs))

    def test_rounds_in_order_per_scope(self):
        out = self.tmp / "run"
        call_command("simulate", "--config", str(self.write_config()), "--out", str(out), stdout=io.StringIO())
        last = {}
        for record in self.records(out):
            self.assertGreaterEqual(record["round"], last.get(record["scope"], 0))
            last[record["scope"]] = record["round"]


class PartitionCommandTests(CliTestCase):
    def test_one_file_per_client(self):
        out = self.tmp / "shards"
        self.assertEqual(main(["partition", "--config", str(self.write_config()), "--out", str(out)]), 0)
        self.assertEqual(sorted(p.name for p in out.iterdir()), [f"client_{i}.flds" for i in range(4)])


class InspectCommandTests(CliTestCase):
    def write_fixture(self, records=FIXTURE):
        path = self.tmp / "run.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        return path

    def test_summary(self):
        summary = summarize(list(read_metrics(self.write_fixture())))
        self.assertEqual(summary["final_round"], 1)
        self.assertEqual(summary["global_acc"], 0.75)
        self.assertEqual(summary["mean_test_acc"], {0: 0.5, 1: 1.0})

    def test_summary_is_deterministic(self):
        path = self.write_fixture()
        outputs = []
        for _ in range(2):
            stdout = io.StringIO()
            call_command("inspect", "--metrics", str(path), "--summary", stdout=stdout)
            outputs.append(stdout.getvalue())
        self.assertEqual(outputs[0], outputs[1])
        self.assertIn("global_acc (round 1): 0.750000", outputs[0])
        self.assertIn("client 0 mean test_acc: 0.500000", outputs[0])

    def test_rejects_extra_fields(self):
        path = self.write_fixture([{**FIXTURE[0], "extra": 1}])
        with self.assertRaises(MetricsFileError):
            list(read_metrics(path))
        with redirect_stderr(io.StringIO()):
            self.assertEqual(main(["inspect", "--metrics", str(path)]), 2)

    def test_rejects_undecodable_lines(self):
        cases = {
            "not UTF-8 text": b'\xff\xfe{"round": 0}\n',
            "not a JSON object": b'{"round": 0,\n',
        }
        for message, content in cases.items():
            with self.subTest(message=message):
                path = self.tmp / "broken.jsonl"
                path.write_bytes(content)
                with self.assertRaisesMessage(MetricsFileError, message):
                    list(read_metrics(path))
                stderr = io.StringIO()
                with redirect_stderr(stderr):
                    self.assertEqual(main(["inspect", "--metrics", str(path), "--summary"]), 2)
                self.assertIn(message, stderr.getvalue())

    def test_missing_metrics_file(self):
        with redirect_stderr(io.StringIO()):
            self.assertEqual(main(["inspect", "--metrics", str(self.tmp / "absent.jsonl")]), 2)


class ExitCodeTests(SimpleTestCase):
    def test_mapping(self):
        cases = [
            (ConfigError("x"), 1),
            (ConfigMismatchError("x"), 1),
            (ProtocolError("x"), 3),
            (AuthenticationError("x"), 3),
            (QuorumNotMetError("x"), 2),
            (FederationError("x"), 2),
            (OSError("x"), 2),
        ]
        for exc, code in cases:
            with self.subTest(exc=type(exc).__name__):
                self.assertEqual(exit_code_for(exc), code)

    def test_unknown_subcommand(self):
        with redirect_stderr(io.StringIO()):
            self.assertEqual(main(["train"]), 1)
