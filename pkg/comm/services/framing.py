"""
Reading and writing whole frames on a socket
"""
import socket

from flkernel.config import WIRE_HEADER_SIZE
from .codec import Message, decode_header, decode_message, encode_message


class ConnectionClosedError(ConnectionError):
    """Exception for a peer that closed the connection mid-conversation"""
    pass


def recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ConnectionClosedError(f"Connection closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    """
    One complete frame. The header is validated before the payload is read.
    """
    header = recv_exact(sock, WIRE_HEADER_SIZE)
    _, payload_len = decode_header(header)
    return header + recv_exact(sock, payload_len)


def read_message(sock: socket.socket) -> Message:
    return decode_message(read_frame(sock))


def send_message(sock: socket.socket, message: Message) -> None:
    sock.sendall(encode_message(message))
