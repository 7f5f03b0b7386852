"""
In-process channel for simulation: the same message vocabulary as the wire,
carried over a pair of queues. With ``serialize=True`` every message goes
through encode/decode on the way.
"""
import queue
from typing import Optional, Tuple

from .codec import Message, ProtocolError, decode_message, encode_message


class ChannelClosedError(ProtocolError):
    """Exception for a receive on a channel with nothing left to deliver"""
    pass


class ChannelEnd:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, serialize: bool):
        self._inbox = inbox
        self._outbox = outbox
        self.serialize = serialize

    def send(self, message: Message) -> None:
        self._outbox.put(encode_message(message) if self.serialize else message)

    def recv(self, timeout: Optional[float] = None) -> Message:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelClosedError("No message arrived on the in-process channel") from None
        return decode_message(item) if self.serialize else item

    def poll(self) -> Optional[Message]:
        """Next message if one is waiting, else None."""
        try:
            item = self._inbox.get_nowait()
        except queue.Empty:
            return None
        return decode_message(item) if self.serialize else item


def inproc_channel_pair(serialize: bool = False) -> Tuple[ChannelEnd, ChannelEnd]:
    """(server side, client side)"""
    to_client: queue.Queue = queue.Queue()
    to_server: queue.Queue = queue.Queue()
    return ChannelEnd(to_server, to_client, serialize), ChannelEnd(to_client, to_server, serialize)
