import numpy as np
from django.test import SimpleTestCase

from aggregation.services.speed import ClientSpeedStats, observe_duration
from core.experiment import TaskKind
from core.testing import make_config
from core.types import as_parameter_vector
from partition.services.datasets import ClientData, Dataset, make_blobs
from trainer.services.local_training import evaluate
from trainer.services.tasks import Task, initial_params
from .services.builtins import (
    ROUND_ETA,
    check_idletime_and_shutdown,
    eval_local,
    global_evaluator,
    install_builtins,
    set_round_eta,
)
from .services.context import ClientContext, FixedClock, ServerContext
from .services.events import (
    CLIENT_EVENTS,
    HookCallbackError,
    HookError,
    HookEvent,
    UnknownHookEventError,
)
from .services.metrics_store import MetricAbsentError, MetricsStore
from .services.registry import HookRegistry


def _server_context(round_index=0, **kwargs):
    return ServerContext(round_index, as_parameter_vector([0.0, 0.0]), **kwargs)


def _client_context(client_id=0, round_index=0, clock=None, **kwargs):
    task = Task(TaskKind.LOGREG, d=2, k=2)
    data = make_blobs(10, 2, 2, 3.0, seed=1)
    client_data = ClientData(train=data, test=data.subset(range(0, 20, 4)))
    return ClientContext(
        client_id, round_index, initial_params(task, 0), client_data, task,
        clock=clock or FixedClock(0.0), **kwargs,
    )


class HookEventTests(SimpleTestCase):
    def test_exactly_nine_events(self):
        self.assertEqual(len(HookEvent), 9)
        self.assertEqual(len(CLIENT_EVENTS), 4)

    def test_unknown_event(self):
        with self.assertRaises(UnknownHookEventError):
            HookRegistry().register_hook("after_training", lambda s, c: None)


class RegistryTests(SimpleTestCase):
    def test_priority_order(self):
        registry = HookRegistry()
        calls = []
        registry.register_hook("on_server_start", lambda s, c: calls.append("p10"), priority=10)
        registry.register_hook("on_server_start", lambda s, c: calls.append("p5"), priority=5)
        registry.register_hook("on_server_start", lambda s, c: calls.append("p5-late"), priority=5)
        registry.emit("on_server_start", _server_context())
        self.assertEqual(calls, ["p5", "p5-late", "p10"])

    def test_no_dedup(self):
        registry = HookRegistry()
        calls = []

        def hook(server_context, client_context):
            calls.append(1)

        registry.register_hook(HookEvent.ON_SERVER_START, hook)
        registry.register_hook(HookEvent.ON_SERVER_START, hook)
        registry.emit(HookEvent.ON_SERVER_START, _server_context())
        self.assertEqual(len(calls), 2)

    def test_decorator(self):
        registry = HookRegistry()

        @registry.on_event("before_aggregation", priority=3)
        def mark(server_context, client_context):
            server_context.set_metadata("marked", 1)

        context = _server_context()
        registry.emit("before_aggregation", context)
        self.assertEqual(context.get_metadata("marked"), 1)
        self.assertEqual(registry.callbacks("before_aggregation")[0].priority, 3)

    def test_empty_registry(self):
        self.assertEqual(HookRegistry().emit("on_experiment_end", _server_context()), 0)

    def test_later_callback_sees_mutation(self):
        registry = HookRegistry()
        seen = []
        registry.register_hook("after_aggregation", lambda s, c: s.set_metadata("k", "v"))
        registry.register_hook("after_aggregation", lambda s, c: seen.append(s.get_metadata("k")))
        registry.emit("after_aggregation", _server_context())
        self.assertEqual(seen, ["v"])

    def test_default_mode_continues_and_counts(self):
        registry = HookRegistry()
        ran = []

        def broken(server_context, client_context):
            raise RuntimeError("boom")

        registry.register_hook("after_aggregation", broken)
        registry.register_hook("after_aggregation", lambda s, c: ran.append(True))
        context = _server_context(round_index=4)
        with self.assertLogs("hooks.services.registry", level="ERROR"):
            failures = registry.emit("after_aggregation", context)
        self.assertEqual(failures, 1)
        self.assertEqual(ran, [True])
        self.assertEqual(context.metrics.get("server", 4, "hook_error_count"), 1.0)

    def test_strict_mode_aborts(self):
        registry = HookRegistry(strict=True)
        ran = []
        registry.register_hook("after_aggregation", lambda s, c: 1 / 0)
        registry.register_hook("after_aggregation", lambda s, c: ran.append(True))
        with self.assertRaises(HookCallbackError):
            registry.emit("after_aggregation", _server_context())
        self.assertEqual(ran, [])

    def test_client_event_needs_client_context(self):
        with self.assertRaises(HookError):
            HookRegistry().emit("after_local_train", _server_context())

    def test_frozen(self):
        registry = HookRegistry().freeze()
        with self.assertRaises(HookError):
            registry.register_hook("on_server_start", lambda s, c: None)


class MetricsStoreTests(SimpleTestCase):
    def test_listing_style_write(self):
        store = MetricsStore()
        store[3][1] = {"test_loss": 0.5, "test_acc": 0.75}
        self.assertEqual(dict(store[3][1]), {"test_loss": 0.5, "test_acc": 0.75})
        self.assertEqual(store.get("3", 1, "test_acc"), 0.75)

    def test_overwrite_per_name(self):
        store = MetricsStore()
        store[0][0] = {"a": 1, "b": 2}
        store[0][0] = {"a": 5}
        self.assertEqual(dict(store[0][0]), {"a": 5.0, "b": 2.0})

    def test_absent_reads_are_explicit(self):
        store = MetricsStore()
        with self.assertRaises(MetricAbsentError):
            store[0][0]
        store.record("server", 0, "x", 1)
        with self.assertRaises(MetricAbsentError):
            store.get("server", 0, "y")
        self.assertEqual(len(store), 1)

    def test_non_numbers_rejected(self):
        with self.assertRaises(HookError):
            MetricsStore().record(0, 0, "x", "high")
        with self.assertRaises(HookError):
            MetricsStore().record(0, 0, "x", float("nan"))

    def test_entries_order(self):
        store = MetricsStore()
        store.record(10, 1, "a", 1)
        store.record(2, 1, "a", 2)
        store.record("server", 1, "b", 3)
        store.record(2, 0, "a", 4)
        self.assertEqual(
            list(store.entries()),
            [(0, "2", "a", 4.0), (1, "server", "b", 3.0), (1, "2", "a", 2.0), (1, "10", "a", 1.0)],
        )


class EvalLocalTests(SimpleTestCase):
    def test_records_test_metrics(self):
        server_context = _server_context(round_index=2)
        client_context = _client_context(client_id=1, round_index=2)
        eval_local(server_context, client_context)
        expected = evaluate(client_context.task, client_context.model, client_context.data.test)
        self.assertEqual(server_context.metrics.get(1, 2, "test_loss"), expected["loss"])
        self.assertEqual(server_context.metrics.get(1, 2, "test_acc"), expected["accuracy"])

    def test_empty_test_split_skipped(self):
        server_context = _server_context()
        client_context = _client_context()
        empty = Dataset(features=np.zeros((0, 2)), labels=np.zeros(0, dtype=np.int64), n_classes=2)
        client_context.data = ClientData(train=client_context.data.train, test=empty)
        eval_local(server_context, client_context)
        self.assertEqual(len(server_context.metrics), 0)


class CostShutdownTests(SimpleTestCase):
    def test_no_eta_before_observations(self):
        context = _server_context(candidates=(0, 1), clock=FixedClock(0.0))
        set_round_eta(context, None)
        self.assertIsNone(context.get_metadata(ROUND_ETA))

    def test_eta_from_slowest_candidate(self):
        stats = ClientSpeedStats()
        for cid, seconds in ((0, 1.0), (1, 1.0), (2, 1.0), (3, 10.0)):
            stats = observe_duration(stats, cid, seconds)
        context = _server_context(candidates=(0, 1, 2, 3), speed_stats=stats, clock=FixedClock(50.0))
        set_round_eta(context, None)
        self.assertEqual(context.get_metadata(ROUND_ETA), 60.0)
        self.assertEqual(max(c.expected_finish for c in context.clients), 60.0)

    def test_fast_client_terminates(self):
        """eta 10s away, client done after 1s, spin-up 2s: idle 7s > 5s"""
        server_context = _server_context(metadata={ROUND_ETA: 10.0})
        client_context = _client_context(clock=FixedClock(1.0), spin_up_time=2.0, shutdown_threshold=5.0)
        check_idletime_and_shutdown(server_context, client_context)
        self.assertTrue(client_context.terminated)

    def test_idle_below_threshold(self):
        server_context = _server_context(metadata={ROUND_ETA: 10.0})
        client_context = _client_context(clock=FixedClock(4.0), spin_up_time=2.0, shutdown_threshold=5.0)
        check_idletime_and_shutdown(server_context, client_context)
        self.assertFalse(client_context.terminated)

    def test_missing_eta(self):
        client_context = _client_context(clock=FixedClock(1.0))
        check_idletime_and_shutdown(_server_context(), client_context)
        self.assertFalse(client_context.terminated)


class InstallBuiltinsTests(SimpleTestCase):
    def test_defaults(self):
        config = make_config()
        pooled = make_blobs(5, 2, 10, 4.0, seed=1)
        registry = install_builtins(HookRegistry(), config, pooled=pooled)
        self.assertEqual([r.callback for r in registry.callbacks("after_local_train")], [eval_local])
        self.assertEqual(len(registry.callbacks("after_aggregation")), 1)
        self.assertEqual(registry.callbacks("before_client_selection"), ())

    def test_cost_shutdown_runs_after_eval(self):
        config = make_config(hooks={"cost_shutdown": True, "eval_global": False})
        registry = install_builtins(HookRegistry(), config)
        names = [r.name for r in registry.callbacks("after_local_train")]
        self.assertEqual(names, ["eval_local", "check_idletime_and_shutdown"])
        self.assertEqual(registry.callbacks("after_aggregation"), ())

    def test_global_evaluator(self):
        task = Task(TaskKind.LOGREG, d=2, k=2)
        pooled = make_blobs(10, 2, 2, 3.0, seed=2)
        context = ServerContext(1, initial_params(task, 0))
        global_evaluator(task, pooled)(context, None)
        self.assertEqual(context.metrics.get("server", 1, "global_acc"), 0.5)
