import queue
import threading
from concurrent.futures import Future
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from aggregation.services.selection import select_clients
from aggregation.services.strategies import fedavg
from comm.services.codec import Ack, ErrorCode, ErrorMessage, GetModel, ModelMessage, Register, RegisterAck
from comm.services.endpoint import Command
from comm.services.proxy import ClientProxy
from comm.services.updates import update_to_message
from core.exceptions import FederationError
from core.experiment import CostConfig, RunMode
from core.services.vectors import l2_norm, vec_axpy, vec_scale, vec_sub
from core.testing import make_config
from core.types import as_parameter_vector
from hooks.services.builtins import build_registry
from hooks.services.context import FixedClock, WallClock
from hooks.services.metrics_store import SERVER_SCOPE
from partition.services.partitioner import all_client_data
from privacy.services.pipeline import privatize_update
from privacy.services.secagg import SecAggDropoutError
from trainer.services.local_training import evaluate, local_train
from trainer.services.tasks import Task, initial_params
from .services.artifacts import ArtifactError, decode_model, encode_model
from .services.clock import SimClock
from .services.deployment import DeploymentAgent, run_client, run_server
from .services.errors import OrchestrationError, QuorumNotMetError
from .services.server import FederationServer
from .services.simulation import Simulation, run_simulation


def _capturing_trainer(sink):
    def trainer(*args, **kwargs):
        update = local_train(*args, **kwargs)
        sink[(update.client_id, update.round)] = update.payload
        return update
    return trainer


def _run_loopback(config):
    """One server thread and one thread per client over 127.0.0.1."""
    ports = queue.Queue()
    results = {}

    def serve():
        try:
            results["server"] = run_server(config, on_listening=ports.put, port=0)
        except Exception as exc:
            results["server_error"] = exc
            ports.put(None)

    server_thread = threading.Thread(target=serve, daemon=True)
    server_thread.start()
    port = ports.get(timeout=10)
    clients = []
    for cid in range(config.clients):
        proxy = ClientProxy("127.0.0.1", port, config.comm.auth_token, config.digest, client_name=f"client-{cid}")
        thread = threading.Thread(target=run_client, args=(config, cid), kwargs={"proxy": proxy}, daemon=True)
        thread.start()
        clients.append(thread)
    for thread in clients:
        thread.join(60)
    server_thread.join(60)
    if "server_error" in results:
        raise results["server_error"]
    return results["server"]


class SimClockTests(SimpleTestCase):
    def test_cost_is_price_times_up_time(self):
        clock = SimClock(CostConfig(price_per_sec=(1.0, 2.0)), 2)
        clock.advance_to(10.0)
        clock.terminate(0, 4.0)
        costs = clock.finalize()
        self.assertEqual(costs, {0: 4.0, 1: 20.0})
        self.assertEqual(clock.total_cost, 24.0)

    def test_down_instance_charges_nothing_until_spin_up(self):
        clock = SimClock(CostConfig(spin_up_time_sec=2.0), 1)
        clock.terminate(0, 1.0)
        clock.advance_to(10.0)
        self.assertTrue(clock.ensure_up(0, 10.0))
        self.assertFalse(clock.ensure_up(0, 10.0))
        clock.advance_to(11.0)
        self.assertEqual(clock.finalize()[0], 1.0 + 3.0)
        self.assertEqual(clock.instances[0].spin_ups, 1)

    def test_time_never_goes_back(self):
        clock = SimClock(CostConfig(), 1)
        clock.advance_to(3.0)
        with self.assertRaises(OrchestrationError):
            clock.advance_to(2.0)

    def test_finalize_is_idempotent(self):
        clock = SimClock(CostConfig(), 2)
        clock.advance_to(5.0)
        self.assertEqual(clock.finalize(), clock.finalize())


class ModelArtifactTests(SimpleTestCase):
    def test_layout(self):
        params = as_parameter_vector([1.5, -2.0])
        data = encode_model(params, bytes(32))
        self.assertEqual(data[:4], b"FLMD")
        self.assertEqual(len(data), 16 + 16 + 32)
        decoded, digest = decode_model(data)
        self.assertEqual(decoded.tobytes(), params.tobytes())
        self.assertEqual(digest, bytes(32))

    def test_rejects_damaged_files(self):
        data = encode_model(as_parameter_vector([1.0]), bytes(32))
        for broken in (data[:10], data[:-1], b"XXXX" + data[4:]):
            with self.assertRaises(ArtifactError):
                decode_model(broken)


class FederationServerTests(SimpleTestCase):
    def setUp(self):
        self.config = make_config(rounds=2)
        self.server = FederationServer(self.config, build_registry(self.config), SimClock(self.config.cost, 4))
        self.server.start()

    def _update(self, cid, round_index=0):
        _, data = all_client_data(self.config)
        task = Task.from_config(self.config)
        return local_train(task, self.server.global_params, data[cid].train, 1, 16, 0.1, 0.0, 7,
                           client_id=cid, round_index=round_index)

    def test_discards_other_rounds_and_repeats(self):
        self.server.open_round()
        self.assertFalse(self.server.receive(self._update(0, round_index=1)))
        update = self._update(0)
        self.assertTrue(self.server.receive(update))
        self.assertTrue(self.server.receive(update))
        self.assertEqual(list(self.server.round_state.received), [0])

    def test_close_round_is_weighted_average(self):
        self.server.open_round()
        updates = [self._update(cid) for cid in range(4)]
        for update in reversed(updates):
            self.server.receive(update)
        params = self.server.close_round(3.0)
        self.assertEqual(params.tobytes(), fedavg(updates).tobytes())
        self.assertEqual(self.server.round, 1)
        self.assertEqual(self.server.metrics.get(SERVER_SCOPE, 0, "round_duration"), 3.0)
        self.assertIsNone(self.server.round_state)

    def test_open_round_after_last_round(self):
        self.server.round = 2
        with self.assertRaises(OrchestrationError):
            self.server.open_round()

    def test_selection_is_drawn_once_per_round(self):
        with mock.patch("orchestrator.services.server.select_clients", wraps=select_clients) as selector:
            state = self.server.open_round()
        self.assertEqual(selector.call_count, 1)
        self.assertEqual(tuple(state.selected), tuple(self.server.context.candidates))


class ParityTests(SimpleTestCase):
    """Serial, parallel, serialized in-process and loopback runs agree bit for bit."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = make_config()
        cls.serial = run_simulation(cls.config)

    def _model_bytes(self, result):
        return encode_model(result.params, result.digest)

    def test_parallel_pools(self):
        for workers in (2, 4):
            with self.subTest(workers=workers):
                result = run_simulation(self.config.with_mode(RunMode.SIMULATE_PARALLEL), parallel=workers)
                self.assertEqual(self._model_bytes(result), self._model_bytes(self.serial))

    def test_metrics_values_match(self):
        result = run_simulation(self.config, parallel=4)
        self.assertEqual(list(result.metrics.entries()), list(self.serial.metrics.entries()))

    def test_serialized_channels(self):
        result = run_simulation(make_config(comm={"serialize_inproc": True}))
        self.assertEqual(result.params.tobytes(), self.serial.params.tobytes())

    def test_loopback_deployment(self):
        result = _run_loopback(self.config.with_mode(RunMode.SERVER))
        self.assertEqual(result.rounds, 5)
        self.assertEqual(self._model_bytes(result), self._model_bytes(self.serial))

    def test_read_only_hooks_leave_trajectory_alone(self):
        quiet = run_simulation(make_config(hooks={"eval_local": False, "eval_global": False}))
        self.assertEqual(quiet.params.tobytes(), self.serial.params.tobytes())
        self.assertFalse(quiet.metrics.has(0, 0, "test_acc"))
        self.assertTrue(self.serial.metrics.has(0, 0, "test_acc"))


class SyncRoundTests(SimpleTestCase):
    def test_single_client_matches_local_training(self):
        config = make_config(clients=1, rounds=4, partition={"scheme": "iid"})
        result = run_simulation(config)
        _, data = all_client_data(config)
        task = Task.from_config(config)
        params = initial_params(task, config.seed)
        for t in range(4):
            params = local_train(task, params, data[0].train, 1, 16, 0.1, 0.0, config.seed,
                                 client_id=0, round_index=t).payload
        self.assertEqual(result.params.tobytes(), params.tobytes())

    def test_stragglers_dropped_at_quorum(self):
        config = make_config(
            clients=3, rounds=2,
            cost={"base_round_sec": [1.0, 1.0, 100.0]},
            timing={"round_timeout_sec": 5.0, "quorum": 2},
        )
        result = run_simulation(config)
        for t in range(2):
            self.assertEqual(result.metrics.get(SERVER_SCOPE, t, "straggler_dropped"), 1)
            self.assertEqual(result.metrics.get(SERVER_SCOPE, t, "round_duration"), 5.0)
            self.assertFalse(result.metrics.has(2, t, "train_loss"))

    def test_no_straggler_record_when_all_arrive(self):
        result = run_simulation(make_config(rounds=1))
        self.assertFalse(result.metrics.has(SERVER_SCOPE, 0, "straggler_dropped"))

    def test_quorum_not_met_after_retry(self):
        config = make_config(
            clients=3, rounds=1,
            cost={"base_round_sec": [1.0, 1.0, 100.0]},
            timing={"round_timeout_sec": 5.0},
        )
        with self.assertRaises(QuorumNotMetError):
            run_simulation(config)

    def test_eval_local_records_one_pair_per_selected_client(self):
        config = make_config(clients=4, rounds=3, client_fraction=0.5, partition={"scheme": "iid"})
        captured = {}
        result = run_simulation(config, trainer=_capturing_trainer(captured))
        _, data = all_client_data(config)
        task = Task.from_config(config)
        pairs = [(r, s) for r, s, name, _ in result.metrics.entries() if name == "test_acc"]
        self.assertEqual(len(pairs), 3 * 2)
        self.assertEqual(len(captured), 3 * 2)
        for (cid, t), params in captured.items():
            expected = evaluate(task, params, data[cid].test)
            self.assertEqual(result.metrics.get(cid, t, "test_acc"), expected["accuracy"])
            self.assertEqual(result.metrics.get(cid, t, "test_loss"), expected["loss"])

    def test_zero_rounds(self):
        result = run_simulation(make_config(rounds=0))
        self.assertEqual(result.rounds, 0)
        self.assertEqual(len(result.metrics), 0)

    def test_convergence(self):
        config = make_config(clients=8, rounds=30, local_epochs=2)
        result = run_simulation(config, parallel=4)
        self.assertGreaterEqual(result.metrics.get(SERVER_SCOPE, 29, "global_acc"), 0.95)


class CostShutdownTests(SimpleTestCase):
    def _config(self, shutdown, speeds=(1.0, 1.0, 1.0, 10.0)):
        return make_config(
            rounds=10,
            cost={"base_round_sec": list(speeds), "spin_up_time_sec": 2.0, "shutdown_threshold_sec": 5.0},
            hooks={"cost_shutdown": shutdown},
        )

    def _simulate(self, config):
        simulation = Simulation(config)
        return simulation, simulation.run()

    def test_fast_clients_terminate_after_first_round(self):
        baseline_sim, baseline = self._simulate(self._config(False))
        sim, result = self._simulate(self._config(True))
        for cid in range(3):
            self.assertEqual(sim.clock.instances[cid].terminations, 9)
            self.assertEqual(sim.clock.instances[cid].spin_ups, 8)
        self.assertEqual(sim.clock.instances[3].terminations, 0)
        self.assertEqual(baseline_sim.clock.total_cost, 400.0)
        self.assertLessEqual(sim.clock.total_cost, 0.7 * baseline_sim.clock.total_cost)
        self.assertEqual(result.params.tobytes(), baseline.params.tobytes())

    def test_homogeneous_speeds_never_terminate(self):
        sim, _ = self._simulate(self._config(True, speeds=(1.0, 1.0, 1.0, 1.0)))
        self.assertEqual(sum(i.terminations for i in sim.clock.instances.values()), 0)

    def test_cost_total_per_client(self):
        _, result = self._simulate(self._config(True))
        for cid in range(4):
            self.assertEqual(result.metrics.get(cid, 9, "cost_total"), result.costs[cid])


class AsyncLoopTests(SimpleTestCase):
    def test_budget_counts_applications(self):
        config = make_config(clients=3, aggregator="async", async_budget=10,
                             cost={"base_round_sec": [1.0, 2.0, 3.0]})
        simulation = Simulation(config)
        result = simulation.run()
        self.assertEqual(result.applications, 10)
        self.assertTrue(all(client.finished for client in simulation.clients.values()))

    def test_single_client_two_step_trace(self):
        config = make_config(clients=1, aggregator="async", async_budget=2, async_alpha=0.5,
                             partition={"scheme": "iid"})
        result = run_simulation(config)
        _, data = all_client_data(config)
        task = Task.from_config(config)
        w = initial_params(task, config.seed)
        for version in range(2):
            local = local_train(task, w, data[0].train, 1, 16, 0.1, 0.0, config.seed,
                                client_id=0, round_index=version).payload
            w = vec_axpy(0.5, local, vec_scale(0.5, w))
        self.assertEqual(result.params.tobytes(), w.tobytes())


class SecAggSimulationTests(SimpleTestCase):
    def test_matches_plain_run(self):
        plain = run_simulation(make_config())
        masked = run_simulation(make_config(secagg={"enabled": True}))
        np.testing.assert_allclose(masked.params, plain.params, rtol=0, atol=1e-4)

    def test_dropout_is_fatal(self):
        config = make_config(
            clients=3, rounds=1,
            secagg={"enabled": True},
            cost={"base_round_sec": [1.0, 1.0, 100.0]},
            timing={"round_timeout_sec": 5.0, "quorum": 2},
        )
        with self.assertRaises(SecAggDropoutError):
            run_simulation(config)

    def test_dropout_with_default_quorum(self):
        config = make_config(
            clients=3, rounds=1,
            secagg={"enabled": True},
            cost={"base_round_sec": [1.0, 1.0, 100.0]},
            timing={"round_timeout_sec": 5.0},
        )
        with self.assertRaisesMessage(SecAggDropoutError, "secagg dropout"):
            run_simulation(config)


def _one_round_by_hand(config, transform=None):
    """FedAvg of every client's local model after one round, optionally privatized."""
    _, data = all_client_data(config)
    task = Task.from_config(config)
    start = initial_params(task, config.seed)
    updates = []
    for cid in range(config.clients):
        update = local_train(task, start, data[cid].train, config.local_epochs, config.batch_size,
                             config.learning_rate, config.prox_mu, config.seed, client_id=cid, round_index=0)
        updates.append(transform(update, start) if transform else update)
    return start, fedavg(updates)


class DifferentialPrivacyFederationTests(SimpleTestCase):
    def test_round_equals_fedavg_of_privatized_updates(self):
        config = make_config(rounds=1, dp={"enabled": True, "clip": 0.5, "epsilon": 2.0})
        _, expected = _one_round_by_hand(
            config, lambda update, start: privatize_update(config, update, start, range(config.clients))
        )
        self.assertEqual(run_simulation(config).params.tobytes(), expected.tobytes())

    def test_runs_are_reproducible_and_noisy(self):
        config = make_config(rounds=3, dp={"enabled": True})
        first = run_simulation(config)
        self.assertEqual(first.params.tobytes(), run_simulation(config).params.tobytes())
        self.assertEqual(first.params.tobytes(), run_simulation(config, parallel=2).params.tobytes())
        self.assertNotEqual(first.params.tobytes(), run_simulation(make_config(rounds=3)).params.tobytes())

    def test_global_drift_bounded_by_clip(self):
        clip = 0.01
        rounds = 3
        config = make_config(rounds=rounds, dp={"enabled": True, "clip": clip, "epsilon": 1e6})
        start = initial_params(Task.from_config(config), config.seed)
        drift = l2_norm(vec_sub(run_simulation(config).params, start))
        self.assertLessEqual(drift, rounds * clip + 1e-3)


class FedProxFederationTests(SimpleTestCase):
    def test_zero_mu_is_plain_fedavg(self):
        config = make_config(rounds=1, prox_mu=0.0)
        _, expected = _one_round_by_hand(config)
        self.assertEqual(run_simulation(config).params.tobytes(), expected.tobytes())

    def test_positive_mu_keeps_model_nearer_the_global(self):
        plain_config = make_config(rounds=1)
        prox_config = make_config(rounds=1, prox_mu=5.0)
        start = initial_params(Task.from_config(plain_config), plain_config.seed)
        plain = run_simulation(plain_config).params
        prox = run_simulation(prox_config).params
        self.assertNotEqual(plain.tobytes(), prox.tobytes())
        self.assertLess(l2_norm(vec_sub(prox, start)), l2_norm(vec_sub(plain, start)))
        _, expected = _one_round_by_hand(prox_config)
        self.assertEqual(prox.tobytes(), expected.tobytes())


class DeploymentAgentTests(SimpleTestCase):
    def setUp(self):
        config = make_config(clients=3).with_mode(RunMode.SERVER)
        self.agent = DeploymentAgent(FederationServer(config, build_registry(config), WallClock()))

    def _register(self, name):
        return self.agent.handle(Command(Register("test-token", name), None, Future()))

    def test_requested_ids_and_reconnects(self):
        self.assertEqual(self._register("client-2").client_id, 2)
        self.assertEqual(self._register("client@host:1").client_id, 0)
        self.assertEqual(self._register("client-2").client_id, 2)
        self.assertEqual(self._register("client-9").client_id, 1)
        self.assertTrue(self.agent.server.started)

    def test_full_federation_rejects_newcomers(self):
        for cid in range(3):
            self.assertIsInstance(self._register(f"client-{cid}"), RegisterAck)
        reply = self._register("late")
        self.assertIsInstance(reply, ErrorMessage)
        self.assertEqual(reply.code, ErrorCode.PROTOCOL)

    def test_failure_answers_every_request(self):
        self.agent.fail(FederationError("boom"))
        self.assertIsInstance(self._register("client-0"), RegisterAck)
        reply = self.agent.handle(Command(GetModel(0), 0, Future()))
        self.assertEqual(reply.code, ErrorCode.INTERNAL)
        self.assertEqual(reply.text, "boom")

    def test_secagg_deadline_with_missing_clients(self):
        config = make_config(clients=3, secagg={"enabled": True},
                             timing={"round_timeout_sec": 5.0}).with_mode(RunMode.SERVER)
        server = FederationServer(config, build_registry(config), FixedClock(0.0))
        agent = DeploymentAgent(server, clock=FixedClock(10.0))
        for cid in range(3):
            agent.handle(Command(Register("test-token", f"client-{cid}"), None, Future()))
        with self.assertRaises(SecAggDropoutError) as caught:
            agent.tick()
        agent.fail(caught.exception)
        reply = agent.handle(Command(GetModel(0), 0, Future()))
        self.assertEqual(reply.code, ErrorCode.SECAGG_DROPOUT)


class AsyncDeploymentTests(SimpleTestCase):
    def setUp(self):
        self.config = make_config(clients=2, aggregator="async", async_budget=4).with_mode(RunMode.SERVER)
        self.agent = DeploymentAgent(FederationServer(self.config, build_registry(self.config), WallClock()))
        for cid in range(2):
            self.agent.handle(Command(Register("test-token", f"client-{cid}"), None, Future()))

    def _fetch(self, cid):
        return self.agent.handle(Command(GetModel(cid), cid, Future()))

    def test_resent_update_is_applied_once(self):
        model = self._fetch(0)
        self.assertIsInstance(model, ModelMessage)
        _, data = all_client_data(self.config)
        update = local_train(Task.from_config(self.config), model.params, data[0].train, 1, 16, 0.1, 0.0,
                             self.config.seed, client_id=0, round_index=model.round)
        message = update_to_message(update)
        server = self.agent.server

        self.assertIsInstance(self.agent.handle(Command(message, 0, Future())), Ack)
        applied = server.global_params.tobytes()
        self.assertIsInstance(self.agent.handle(Command(message, 0, Future())), Ack)
        self.assertEqual(server.applications, 1)
        self.assertEqual(server.global_params.tobytes(), applied)

        fresh = self._fetch(0)
        self.assertIsInstance(fresh, ModelMessage)
        self.assertEqual(fresh.round, 1)
