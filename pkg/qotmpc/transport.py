"""Ordered, reliable message channels between the two parties.

Every channel records a transcript of what it sent and received, in the
order the local party observed it, and counts the framed bytes per
direction.
"""

from abc import ABC, abstractmethod
import logging
import queue
import socket
import threading
import time

from qotmpc.wire import FrameError, TranscriptEntry, WireMessage, decode_frame, encode_frame, read_frame

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0
CONNECT_RETRY_S = 0.05


class TransportError(ConnectionError):
    pass


class Channel(ABC):
    def __init__(self, role: str, peer: str):
        self.role = role
        self.peer = peer
        self.transcript: list[TranscriptEntry] = []
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg: WireMessage):
        frame = encode_frame(msg)
        self._send_frame(frame)
        self.bytes_sent += len(frame)
        self._record(self.role, msg)

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> WireMessage:
        msg = self._recv_message(timeout)
        self.bytes_received += len(encode_frame(msg))
        self._record(self.peer, msg)
        return msg

    def _record(self, sender: str, msg: WireMessage):
        self.transcript.append(TranscriptEntry(len(self.transcript), sender, msg.tag, msg.payload))
        logger.debug("%s: %s %s", self.role, "sent" if sender == self.role else "received", msg)

    @abstractmethod
    def _send_frame(self, frame: bytes): ...

    @abstractmethod
    def _recv_message(self, timeout: float | None) -> WireMessage: ...

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_CLOSED = object()


class LocalChannel(Channel):
    """One end of an in-process channel. Frames travel through queues as bytes."""

    def __init__(self, role: str, peer: str, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__(role, peer)
        self._inbox = inbox
        self._outbox = outbox

    @classmethod
    def pair(cls, role_a: str = "alice", role_b: str = "bob") -> tuple["LocalChannel", "LocalChannel"]:
        a_to_b, b_to_a = queue.Queue(), queue.Queue()
        return cls(role_a, role_b, b_to_a, a_to_b), cls(role_b, role_a, a_to_b, b_to_a)

    def _send_frame(self, frame: bytes):
        self._outbox.put(frame)

    def _recv_message(self, timeout):
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"{self.role}: no message from {self.peer} within {timeout}s") from None
        if frame is _CLOSED:
            raise TransportError(f"{self.role}: {self.peer} closed the channel")
        msg, rest = decode_frame(frame)
        if rest:
            raise FrameError(f"{len(rest)} stray bytes after frame")
        return msg

    def pending(self) -> bool:
        return not self._inbox.empty()

    def close(self):
        self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    """A TCP connection. A background reader thread decodes incoming frames into
    a queue, so reading and writing proceed concurrently."""

    def __init__(self, sock: socket.socket, role: str, peer: str):
        super().__init__(role, peer)
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()
        self._incoming: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, name=f"{role}-reader", daemon=True)
        self._reader.start()

    @classmethod
    def listen(
        cls, host: str, port: int, role: str, peer: str, timeout: float = DEFAULT_TIMEOUT
    ) -> "TcpChannel":
        with socket.create_server((host, port)) as server:
            server.settimeout(timeout)
            try:
                conn, addr = server.accept()
            except socket.timeout:
                raise TransportError(f"No peer connected to {host}:{port} within {timeout}s") from None
        conn.settimeout(None)
        logger.info("%s accepted connection from %s:%d", role, *addr[:2])
        return cls(conn, role, peer)

    @classmethod
    def connect(
        cls, host: str, port: int, role: str, peer: str, timeout: float = DEFAULT_TIMEOUT
    ) -> "TcpChannel":
        """Retries a refused connection until timeout, so the listener may come up second."""
        deadline = time.monotonic() + (timeout if timeout is not None else DEFAULT_TIMEOUT)
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                break
            except ConnectionRefusedError as e:
                if time.monotonic() >= deadline:
                    raise TransportError(f"Cannot connect to {host}:{port}: {e}") from e
                time.sleep(CONNECT_RETRY_S)
            except OSError as e:
                raise TransportError(f"Cannot connect to {host}:{port}: {e}") from e
        sock.settimeout(None)
        logger.info("%s connected to %s:%d", role, host, port)
        return cls(sock, role, peer)

    def _read_exact(self, n: int) -> bytes:
        chunks, remaining = [], n
        while remaining:
            chunk = self._sock.recv(min(remaining, 1 << 20))
            if not chunk:
                break
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _read_loop(self):
        while True:
            try:
                msg = read_frame(self._read_exact)
            except FrameError as e:
                # A clean close between frames shows up as an empty header.
                self._incoming.put(e)
                return
            except OSError as e:
                self._incoming.put(TransportError(f"{self.role}: connection lost: {e}"))
                return
            self._incoming.put(msg)

    def _send_frame(self, frame: bytes):
        try:
            with self._lock:
                self._sock.sendall(frame)
        except OSError as e:
            raise TransportError(f"{self.role}: send failed: {e}") from e

    def _recv_message(self, timeout):
        try:
            item = self._incoming.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"{self.role}: no message from {self.peer} within {timeout}s") from None
        if isinstance(item, Exception):
            # Leave the error in place for any later recv.
            self._incoming.put(item)
            raise item
        return item

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"Endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def tcp_transport(role: str, peer: str, listen: str | None = None, connect: str | None = None,
                  timeout: float = DEFAULT_TIMEOUT) -> TcpChannel:
    if (listen is None) == (connect is None):
        raise ValueError("Exactly one of listen and connect must be given")
    if listen is not None:
        return TcpChannel.listen(*parse_endpoint(listen), role, peer, timeout=timeout)
    return TcpChannel.connect(*parse_endpoint(connect), role, peer, timeout=timeout)
