"""Ordered, reliable message transport between two protocol roles.

Two transports share one endpoint interface: an in-process queue pair and
a framed TCP connection over loopback.  A frame on the socket is a one-byte
tag, a four-byte big-endian payload length and the payload.  Every message
sent or received is appended to the endpoint's transcript.
"""
from __future__ import annotations

import queue
import socket
import struct
import threading
from enum import IntEnum
from typing import Callable

from .transcript import Transcript, TranscriptEntry


class ChannelError(Exception):
    pass


class Tag(IntEnum):
    STATE = 1
    BOX = 2
    ITERATE_T = 3
    ITERATE_U = 4
    TRUNC_REQ = 5
    TRUNC_RESP = 6
    CMP_D = 7
    CMP_BITS = 8
    CMP_C = 9
    CMP_E = 10
    SEL_REQ = 11
    SEL_RESP = 12
    OUT_REQ = 13
    OUT_RESP = 14
    OUTPUT = 15
    ABORT = 255


_HEADER = struct.Struct(">BI")
RECV_TIMEOUT = 120.0


class Endpoint:
    """One side of a duplex channel.

    Subclasses provide ``_put(tag, payload)`` and ``_get() -> (tag, payload)``.
    """

    def __init__(self, role: str, peer: str, session_id: str = "s0"):
        self.role = role
        self.peer = peer
        self.session_id = session_id
        self.sent = 0
        self.received = 0
        self.transcript = Transcript(role)
        self.bytes_sent = 0

    def send(self, tag: Tag, payload: bytes):
        self._put(int(tag), payload)
        self.sent += 1
        self.bytes_sent += len(payload) + _HEADER.size
        self.transcript.entries.append(
            TranscriptEntry("send", self.peer, Tag(tag).name, payload, self.sent - 1))

    def recv(self, tag: Tag) -> bytes:
        got, payload = self._get()
        if got == Tag.ABORT:
            raise ChannelError(f"{self.peer} aborted the session: {payload.decode(errors='replace')}")
        if got != tag:
            raise ChannelError(f"{self.role} expected {Tag(tag).name}, got tag {got} "
                               f"(message {self.received} from {self.peer})")
        self.received += 1
        self.transcript.entries.append(
            TranscriptEntry("recv", self.peer, Tag(tag).name, payload, self.received - 1))
        return payload

    def note_view(self, values):
        """Attach what this role could read from the last received payload."""
        self.transcript.entries[-1].view = [int(v) for v in values]

    def abort(self, reason: str):
        try:
            self._put(int(Tag.ABORT), reason.encode())
        except Exception:
            pass

    def close(self):
        pass

    def _put(self, tag: int, payload: bytes):
        raise NotImplementedError

    def _get(self) -> tuple[int, bytes]:
        raise NotImplementedError


class QueueEndpoint(Endpoint):
    def __init__(self, role, peer, inbox: queue.Queue, outbox: queue.Queue, session_id="s0",
                 timeout: float = RECV_TIMEOUT):
        super().__init__(role, peer, session_id)
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout

    def _put(self, tag, payload):
        self._outbox.put((self.session_id, self.sent, tag, bytes(payload)))

    def _get(self):
        try:
            sid, seq, tag, payload = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise ChannelError(f"{self.role} timed out waiting for {self.peer}") from None
        if sid != self.session_id:
            raise ChannelError(f"message from session {sid} on session {self.session_id}")
        if tag != Tag.ABORT and seq != self.received:
            raise ChannelError(f"out-of-order message: expected #{self.received}, got #{seq}")
        return tag, payload


def queue_pair(a: str, b: str, session_id: str = "s0") -> tuple[QueueEndpoint, QueueEndpoint]:
    ab, ba = queue.Queue(), queue.Queue()
    return (QueueEndpoint(a, b, ba, ab, session_id), QueueEndpoint(b, a, ab, ba, session_id))


class SocketEndpoint(Endpoint):
    def __init__(self, role, peer, sock: socket.socket, session_id="s0",
                 timeout: float = RECV_TIMEOUT):
        super().__init__(role, peer, session_id)
        self._sock = sock
        self._sock.settimeout(timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _put(self, tag, payload):
        self._sock.sendall(encode_frame(tag, payload))

    def _read(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise ChannelError(f"{self.role} timed out waiting for {self.peer}") from None
            if not chunk:
                raise ChannelError(f"connection to {self.peer} closed")
            buf += chunk
        return bytes(buf)

    def _get(self):
        tag, length = _HEADER.unpack(self._read(_HEADER.size))
        return tag, self._read(length)

    def close(self):
        self._sock.close()


def encode_frame(tag: int, payload: bytes) -> bytes:
    return _HEADER.pack(tag, len(payload)) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, bytes]:
    """Split one frame off ``buf``; returns (tag, payload, rest)."""
    if len(buf) < _HEADER.size:
        raise ChannelError("truncated frame header")
    tag, length = _HEADER.unpack_from(buf)
    end = _HEADER.size + length
    if len(buf) < end:
        raise ChannelError(f"truncated frame: need {length} payload bytes, have {len(buf) - _HEADER.size}")
    return tag, buf[_HEADER.size:end], buf[end:]


def socket_pair(a: str, b: str, session_id: str = "s0") -> tuple[SocketEndpoint, SocketEndpoint]:
    """Two endpoints joined by a TCP connection on 127.0.0.1."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.bind(("127.0.0.1", 0))
        srv.listen(1)
        cli = socket.create_connection(srv.getsockname())
        conn, _ = srv.accept()
    return SocketEndpoint(a, b, cli, session_id), SocketEndpoint(b, a, conn, session_id)


def make_pair(a: str, b: str, transport: str = "inproc", session_id: str = "s0"):
    if transport == "inproc":
        return queue_pair(a, b, session_id)
    if transport == "socket":
        return socket_pair(a, b, session_id)
    raise ValueError(f"unknown transport {transport!r}")


def run_parties(parties: dict[str, Callable[[], object]], endpoints: list[Endpoint]) -> dict[str, object]:
    """Run each role in its own thread; re-raise the first failure.

    A failing role aborts its channels so peers stop waiting.
    """
    results: dict[str, object] = {}
    errors: list[tuple[str, BaseException]] = []
    lock = threading.Lock()

    def wrap(role, fn):
        try:
            res = fn()
            with lock:
                results[role] = res
        except BaseException as exc:
            with lock:
                errors.append((role, exc))
            for ep in endpoints:
                if ep.role == role:
                    ep.abort(f"{type(exc).__name__}: {exc}")

    threads = [threading.Thread(target=wrap, args=(r, f), name=r, daemon=True)
               for r, f in parties.items()]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        # report the originating failure rather than a peer's abort notice
        primary = [e for e in errors if not isinstance(e[1], ChannelError)] or errors
        raise primary[0][1]
    return results
