"""Classical-channel framing and transports.

Frame layout: 1-byte message type, 4-byte big-endian body length, body.
Bodies produced by this package are ``u32 json_length || json || blob``.
"""
from __future__ import annotations

import enum
import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass

from ..errors import ConnectionLost, FramingError

MAX_FRAME = 64 * 1024 * 1024
_HEADER = struct.Struct(">BI")
_JSON_LEN = struct.Struct(">I")


class MsgType(enum.IntEnum):
    HELLO = 1
    CONFIG = 2
    PI = 3
    TAGS = 4
    BASES = 5
    QBER_SAMPLE = 6
    SYNDROME = 7
    MAC = 8
    PA_SEED = 9
    PQ_PUBKEY = 10
    DATA = 11
    ABORT = 12


@dataclass(frozen=True)
class WireMessage:
    type: MsgType
    body: bytes = b""
    # how the body is protected: cleartext, aes, otp (masked) or seq (layered)
    disposition: str = "cleartext"

    @property
    def length(self) -> int:
        return len(self.body)

    def encode(self) -> bytes:
        if len(self.body) > MAX_FRAME:
            raise FramingError(f"frame body of {len(self.body)} bytes exceeds {MAX_FRAME}")
        return _HEADER.pack(int(self.type), len(self.body)) + self.body


def parse_header(header: bytes) -> tuple[MsgType, int]:
    kind, length = _HEADER.unpack(header)
    try:
        kind = MsgType(kind)
    except ValueError as exc:
        raise FramingError(f"unknown message type {kind}") from exc
    if length > MAX_FRAME:
        raise FramingError(f"declared frame length {length} exceeds {MAX_FRAME}")
    return kind, length


def decode_frame(frame: bytes) -> WireMessage:
    if len(frame) < _HEADER.size:
        raise FramingError("torn frame header")
    kind, length = parse_header(frame[: _HEADER.size])
    body = frame[_HEADER.size :]
    if len(body) != length:
        raise FramingError(f"frame declares {length} body bytes, carries {len(body)}")
    return WireMessage(kind, body)


def pack_body(header: dict | None = None, blob: bytes = b"") -> bytes:
    text = json.dumps(header or {}, sort_keys=True, separators=(",", ":")).encode()
    return _JSON_LEN.pack(len(text)) + text + blob


def unpack_body(body: bytes) -> tuple[dict, bytes]:
    if len(body) < _JSON_LEN.size:
        raise FramingError("body too short for its header")
    (n,) = _JSON_LEN.unpack(body[: _JSON_LEN.size])
    end = _JSON_LEN.size + n
    if end > len(body):
        raise FramingError("body header overruns the frame")
    try:
        header = json.loads(body[_JSON_LEN.size : end])
    except ValueError as exc:
        raise FramingError("body header is not valid JSON") from exc
    return header, body[end:]


class Transport:
    """One endpoint of a reliable, ordered, bidirectional frame channel."""

    def send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self, timeout: float | None = None) -> bytes:
        raise NotImplementedError

    def send(self, msg: WireMessage) -> None:
        self.send_frame(msg.encode())

    def recv(self, timeout: float | None = None) -> WireMessage:
        return decode_frame(self.recv_frame(timeout))

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    _CLOSED = object()

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox

    @classmethod
    def pair(cls) -> tuple["InProcessTransport", "InProcessTransport"]:
        q1, q2 = queue.Queue(), queue.Queue()
        return cls(q1, q2), cls(q2, q1)

    def send_frame(self, frame: bytes) -> None:
        if len(frame) - _HEADER.size > MAX_FRAME:
            raise FramingError("frame exceeds the maximum size")
        self._outbox.put(bytes(frame))

    def recv_frame(self, timeout: float | None = None) -> bytes:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty as exc:
            raise ConnectionLost("timed out waiting for the peer") from exc
        if item is self._CLOSED:
            self._inbox.put(item)
            raise ConnectionLost("peer closed the channel")
        return item

    def close(self) -> None:
        self._outbox.put(self._CLOSED)


class TcpTransport(Transport):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "TcpTransport":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(None)
        return cls(sock)

    @classmethod
    def accept(cls, server: socket.socket) -> "TcpTransport":
        sock, _ = server.accept()
        return cls(sock)

    @staticmethod
    def listen(host: str, port: int) -> socket.socket:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        return server

    def send_frame(self, frame: bytes) -> None:
        if len(frame) - _HEADER.size > MAX_FRAME:
            raise FramingError("frame exceeds the maximum size")
        with self._send_lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc

    def _read_exact(self, n: int, started: bool) -> bytes:
        chunks, got = [], 0
        while got < n:
            try:
                chunk = self._sock.recv(min(n - got, 1 << 20))
            except socket.timeout as exc:
                raise ConnectionLost("timed out waiting for the peer") from exc
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not chunk:
                if started or got:
                    raise FramingError("connection closed inside a frame")
                raise ConnectionLost("peer closed the connection")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_frame(self, timeout: float | None = None) -> bytes:
        self._sock.settimeout(timeout)
        header = self._read_exact(_HEADER.size, started=False)
        _, length = parse_header(header)
        return header + self._read_exact(length, started=True)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
