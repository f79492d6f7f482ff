"""Reliable ordered channels between the two parties.

Both transports move serialized bytes, so the in-process path exercises the
same wire encoding as TCP. Every sent message is appended to a shared
:class:`Transcript`.
"""

from __future__ import annotations

import queue
import socket
import threading
from pathlib import Path

from pmpgraph.protocol.wire import LENGTH_PREFIX, ProtocolError, WireMessage, deserialize, frame, iter_frames, serialize

RECV_TIMEOUT = 60.0


class Transcript:
    """Thread-safe, ordered record of every message sent on a channel pair."""

    def __init__(self):
        self._lock = threading.Lock()
        self._frames: list[bytes] = []

    def record(self, data: bytes) -> None:
        with self._lock:
            self._frames.append(data)

    def raw(self) -> list[bytes]:
        with self._lock:
            return list(self._frames)

    def messages(self) -> list[WireMessage]:
        return [deserialize(b) for b in self.raw()]

    def to_bytes(self) -> bytes:
        return b"".join(frame(b) for b in self.raw())

    def dump(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @staticmethod
    def load(path) -> list[WireMessage]:
        return list(iter_frames(Path(path).read_bytes()))


class Endpoint:
    def __init__(self, transcript: Transcript | None):
        self.transcript = transcript

    def send(self, msg: WireMessage) -> None:
        data = serialize(msg)
        if self.transcript is not None:
            self.transcript.record(data)
        self._send_bytes(data)

    def recv(self) -> WireMessage:
        return deserialize(self._recv_bytes())

    def close(self) -> None:
        pass

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self) -> bytes:
        raise NotImplementedError


class InprocEndpoint(Endpoint):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, transcript: Transcript | None):
        super().__init__(transcript)
        self._inbox = inbox
        self._outbox = outbox

    def _send_bytes(self, data: bytes) -> None:
        self._outbox.put(data)

    def _recv_bytes(self) -> bytes:
        try:
            return self._inbox.get(timeout=RECV_TIMEOUT)
        except queue.Empty:
            raise ProtocolError("timed out waiting for peer") from None


def inproc_pair(transcript: Transcript | None = None) -> tuple[InprocEndpoint, InprocEndpoint]:
    """Connected (party A, party B) endpoints backed by two FIFO queues."""
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return InprocEndpoint(b_to_a, a_to_b, transcript), InprocEndpoint(a_to_b, b_to_a, transcript)


class TcpEndpoint(Endpoint):
    """One side of a TCP connection carrying u32 big-endian length-prefixed frames."""

    def __init__(self, sock: socket.socket, transcript: Transcript | None):
        super().__init__(transcript)
        self._sock = sock
        self._sock.settimeout(RECV_TIMEOUT)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str, port: int, transcript: Transcript | None = None) -> "TcpEndpoint":
        return cls(socket.create_connection((host, port), timeout=RECV_TIMEOUT), transcript)

    def _send_bytes(self, data: bytes) -> None:
        self._sock.sendall(frame(data))

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise ProtocolError("timed out waiting for peer") from None
            if not chunk:
                raise ProtocolError("connection closed by peer")
            buf += chunk
        return bytes(buf)

    def _recv_bytes(self) -> bytes:
        (n,) = LENGTH_PREFIX.unpack(self._recv_exact(LENGTH_PREFIX.size))
        return self._recv_exact(n)

    def close(self) -> None:
        self._sock.close()


class TcpListener:
    """Party A's side: accepts exactly one connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()[:2]

    def accept(self, transcript: Transcript | None = None) -> TcpEndpoint:
        self._sock.settimeout(RECV_TIMEOUT)
        conn, _ = self._sock.accept()
        self._sock.close()
        return TcpEndpoint(conn, transcript)


def tcp_pair(host: str = "127.0.0.1", port: int = 0, transcript: Transcript | None = None) -> tuple[TcpEndpoint, TcpEndpoint]:
    """Connected (party A, party B) endpoints over a loopback TCP socket."""
    listener = TcpListener(host, port)
    result: dict = {}

    def _accept():
        try:
            result["a"] = listener.accept(transcript)
        except Exception as exc:  # surfaced below
            result["err"] = exc

    t = threading.Thread(target=_accept, daemon=True)
    t.start()
    b = TcpEndpoint.connect(*listener.address, transcript=transcript)
    t.join()
    if "err" in result:
        raise result["err"]
    return result["a"], b
