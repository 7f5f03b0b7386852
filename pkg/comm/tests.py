import socket
import threading
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from core.services.seeding import SplitMix64
from core.types import LocalUpdate, as_parameter_vector
from .services.codec import (
    Ack,
    BadMagicError,
    BadVersionError,
    DecodeError,
    Done,
    ErrorCode,
    ErrorMessage,
    GetModel,
    MalformedJsonError,
    ModelMessage,
    PayloadLengthError,
    Register,
    RegisterAck,
    TruncatedFrameError,
    UnknownMessageTypeError,
    UpdateMessage,
    decode_message,
    encode_message,
)
from .services.endpoint import CommandQueue, server_endpoint
from .services.framing import read_message, send_message
from .services.inproc import inproc_channel_pair
from .services.proxy import (
    AuthenticationError,
    ClientProxy,
    ConfigMismatchError,
    RetryExhaustedError,
    backoff_delays,
)
from .services.updates import message_to_update, update_to_message

TOKEN = "secret"
DIGEST = bytes(range(32))


def _text(rng, limit=12):
    alphabet = "abcXYZ019 _-éß✓"
    return "".join(alphabet[rng.below(len(alphabet))] for _ in range(rng.below(limit)))


def random_message(rng):
    kind = rng.below(8)
    if kind == 0:
        return ErrorMessage(code=rng.below(1 << 16), text=_text(rng))
    if kind == 1:
        return Register(auth_token=_text(rng), client_name=_text(rng))
    if kind == 2:
        return RegisterAck(client_id=rng.below(1 << 32), digest=bytes(rng.below(256) for _ in range(32)))
    if kind == 3:
        return GetModel(client_id=rng.below(1 << 32))
    if kind == 4:
        metadata = {"round_eta": rng.normal() * 100, "tag": _text(rng), "n": rng.below(1000)}
        return ModelMessage(round=rng.below(1 << 32), params=rng.normal(1 + rng.below(40)), metadata=metadata)
    if kind == 5:
        masked = rng.below(2) == 1
        dim = 1 + rng.below(40)
        payload = rng.u64_array(dim) if masked else rng.normal(dim)
        return UpdateMessage(
            client_id=rng.below(1 << 32),
            round=rng.below(1 << 32),
            sample_count=rng.below(1 << 40),
            masked=masked,
            payload=payload,
            metrics={"train_loss": rng.uniform(), "test_acc": rng.uniform()},
        )
    if kind == 6:
        return Ack()
    return Done(final_round=rng.below(1 << 32))


class _FakeAgent(threading.Thread):
    """Drains a CommandQueue like the server agent: ids in registration order."""

    def __init__(self, commands, polls_before_model=0, done=False):
        super().__init__(daemon=True)
        self.commands = commands
        self.names = {}
        self.polls_left = polls_before_model
        self.done = done
        self.updates = []
        self.stop = threading.Event()

    def run(self):
        while not self.stop.is_set():
            command = self.commands.get(timeout=0.05)
            if command is None:
                continue
            message = command.message
            if isinstance(message, Register):
                client_id = self.names.setdefault(message.client_name, len(self.names))
                command.future.set_result(RegisterAck(client_id, DIGEST))
            elif isinstance(message, GetModel):
                if self.done:
                    command.future.set_result(Done(3))
                elif self.polls_left > 0:
                    self.polls_left -= 1
                    command.future.set_result(None)
                else:
                    command.future.set_result(ModelMessage(1, as_parameter_vector([1.0, 2.0]), {"round_eta": 5.0}))
            else:
                self.updates.append(message)
                command.future.set_result(Ack())


class CodecTests(SimpleTestCase):
    def test_get_model_golden_bytes(self):
        expected = bytes.fromhex("464c0103" "0400000000000000" "07000000")
        self.assertEqual(encode_message(GetModel(client_id=7)), expected)
        self.assertEqual(decode_message(expected), GetModel(client_id=7))

    def test_ack_and_done_layout(self):
        self.assertEqual(encode_message(Ack()), b"FL\x01\x06" + bytes(8))
        self.assertEqual(encode_message(Done(2))[12:], b"\x02\x00\x00\x00")

    def test_random_round_trip(self):
        rng = SplitMix64(2024)
        for _ in range(1000):
            frame = encode_message(random_message(rng))
            self.assertEqual(encode_message(decode_message(frame)), frame)

    def test_model_values_preserved(self):
        params = as_parameter_vector([0.1, -0.0, 1e-300])
        decoded = decode_message(encode_message(ModelMessage(4, params, {"round_eta": 12.5})))
        self.assertEqual(decoded.params.tobytes(), params.tobytes())
        self.assertEqual(decoded.metadata, {"round_eta": 12.5})
        self.assertEqual(decoded.round, 4)

    def test_header_errors(self):
        frame = bytearray(encode_message(GetModel(1)))
        cases = [
            (0, 0x00, BadMagicError),
            (2, 0x02, BadVersionError),
            (3, 0x09, UnknownMessageTypeError),
        ]
        for offset, value, error in cases:
            corrupt = bytearray(frame)
            corrupt[offset] = value
            with self.subTest(error=error.__name__), self.assertRaises(error):
                decode_message(bytes(corrupt))

    def test_length_errors(self):
        frame = encode_message(GetModel(1))
        with self.assertRaises(TruncatedFrameError):
            decode_message(frame[:-1])
        with self.assertRaises(PayloadLengthError):
            decode_message(frame + b"\x00")

    def test_error_codes_distinct(self):
        codes = {cls.code for cls in DecodeError.__subclasses__()}
        self.assertEqual(len(codes), len(DecodeError.__subclasses__()))

    def test_non_canonical_json_rejected(self):
        frame = bytearray(encode_message(ModelMessage(0, as_parameter_vector([1.0]), {"a": 1})))
        json_start = 12 + 4 + 8 + 8 + 4
        self.assertEqual(bytes(frame[json_start:]), b'{"a":1}')
        frame[json_start:] = b'{"a" 1}'
        with self.assertRaises(MalformedJsonError):
            decode_message(bytes(frame))

    def test_truncation_and_corruption_fuzz(self):
        """10^4 mangled frames: only typed decode errors"""
        rng = SplitMix64(99)
        frames = [encode_message(random_message(rng)) for _ in range(200)]
        for i in range(10_000):
            frame = bytearray(frames[i % len(frames)])
            if i % 2:
                del frame[rng.below(len(frame)):]
            else:
                position = rng.below(len(frame))
                frame[position] = (frame[position] + 1 + rng.below(255)) % 256
            try:
                decode_message(bytes(frame))
            except DecodeError:
                pass

    def test_every_truncation_fails(self):
        frame = encode_message(UpdateMessage(1, 2, 3, False, as_parameter_vector([1.0, 2.0]), {"x": 1.0}))
        for cut in range(len(frame)):
            with self.assertRaises(DecodeError):
                decode_message(frame[:cut])


class UpdateConversionTests(SimpleTestCase):
    def test_reserved_metrics_travel(self):
        update = LocalUpdate(
            client_id=2, round=5, sample_count=9, payload=as_parameter_vector([1.0]),
            train_loss=0.25, wall_time_sec=1.5, metrics={"test_acc": 0.5},
        )
        back = message_to_update(decode_message(encode_message(update_to_message(update))))
        self.assertEqual((back.client_id, back.round, back.sample_count), (2, 5, 9))
        self.assertEqual((back.train_loss, back.wall_time_sec), (0.25, 1.5))
        self.assertEqual(dict(back.metrics), {"test_acc": 0.5})


class InprocChannelTests(SimpleTestCase):
    def test_plain_and_serialized_deliver_same_messages(self):
        params = as_parameter_vector([3.0, -1.0])
        for serialize in (False, True):
            server, client = inproc_channel_pair(serialize=serialize)
            server.send(ModelMessage(0, params, {"round_eta": 1.0}))
            received = client.recv(timeout=1)
            self.assertEqual(received.params.tobytes(), params.tobytes())
            client.send(Done(0))
            self.assertEqual(server.recv(timeout=1), Done(0))
            self.assertIsNone(server.poll())


class EndpointTests(SimpleTestCase):
    def setUp(self):
        self.commands = CommandQueue()
        self.agent = _FakeAgent(self.commands)
        self.agent.start()
        self.server = server_endpoint("127.0.0.1", 0, self.commands, TOKEN)
        self.server.start()

    def tearDown(self):
        self.server.stop()
        self.agent.stop.set()
        self.commands.close()

    def _proxy(self, name="client", **kwargs):
        return ClientProxy("127.0.0.1", self.server.port, TOKEN, DIGEST, client_name=name, **kwargs)

    def test_wrong_token_closes_connection(self):
        with socket.create_connection(("127.0.0.1", self.server.port), timeout=5) as sock:
            send_message(sock, Register("wrong", "client-0"))
            self.assertEqual(read_message(sock).code, ErrorCode.AUTH)
            self.assertEqual(sock.recv(1), b"")

    def test_proxy_surfaces_auth_rejection(self):
        proxy = ClientProxy("127.0.0.1", self.server.port, "wrong", DIGEST)
        with self.assertRaises(AuthenticationError):
            proxy.register()

    def test_unauthenticated_requests_rejected(self):
        with socket.create_connection(("127.0.0.1", self.server.port), timeout=5) as sock:
            send_message(sock, GetModel(0))
            self.assertEqual(read_message(sock).code, ErrorCode.PROTOCOL)

    def test_garbage_frame(self):
        with socket.create_connection(("127.0.0.1", self.server.port), timeout=5) as sock:
            sock.sendall(b"XX" + bytes(10))
            self.assertEqual(read_message(sock).code, ErrorCode.PROTOCOL)

    def test_digest_mismatch(self):
        proxy = ClientProxy("127.0.0.1", self.server.port, TOKEN, bytes(32))
        with self.assertRaises(ConfigMismatchError):
            proxy.register()

    def test_concurrent_registration(self):
        ids = {}
        barrier = threading.Barrier(2)

        def register(name):
            barrier.wait()
            ids[name] = self._proxy(name).register()

        threads = [threading.Thread(target=register, args=(f"c{i}",)) for i in range(2)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join(10)
        self.assertEqual(sorted(ids.values()), [0, 1])

    def test_fetch_and_submit(self):
        self.agent.polls_left = 2
        proxy = self._proxy()
        client_id = proxy.register()
        model = proxy.fetch_model()
        self.assertEqual(model.params.tolist(), [1.0, 2.0])
        self.assertEqual(model.metadata["round_eta"], 5.0)
        update = UpdateMessage(client_id, 1, 4, False, as_parameter_vector([0.5, 0.5]), {})
        self.assertIsInstance(proxy.submit_update(update), Ack)
        self.assertEqual(len(self.agent.updates), 1)
        proxy.close()

    def test_done_is_terminal(self):
        self.agent.done = True
        proxy = self._proxy()
        proxy.register()
        self.assertEqual(proxy.fetch_model(), Done(3))
        self.assertTrue(proxy.finished)
        with self.assertRaises(Exception):
            proxy.fetch_model()

    def test_retry_after_refused_connection(self):
        real_connect = socket.create_connection
        attempts = []

        def flaky(address, timeout=None):
            attempts.append(address)
            if len(attempts) == 1:
                raise ConnectionRefusedError("server not up yet")
            return real_connect(address, timeout=timeout)

        sleep = mock.Mock()
        proxy = self._proxy(connect=flaky, sleep=sleep)
        self.assertEqual(proxy.register(), 0)
        self.assertEqual(len(attempts), 2)
        sleep.assert_called_once_with(0.2)

    def test_retry_exhaustion(self):
        connect = mock.Mock(side_effect=ConnectionRefusedError("down"))
        sleep = mock.Mock()
        proxy = self._proxy(connect=connect, sleep=sleep)
        with self.assertRaises(RetryExhaustedError):
            proxy.register()
        self.assertEqual(connect.call_count, 5)
        self.assertEqual([c.args[0] for c in sleep.call_args_list], backoff_delays())

    def test_backoff_schedule(self):
        np.testing.assert_allclose(backoff_delays(), [0.2, 0.4, 0.8, 1.6])
