"""Transport between an edge agent and the cloud.

Both links speak the same line protocol and count outbound bytes per
topic at the transport boundary, so bandwidth metrics are measured on
real encoded frames rather than estimated.

InProcessLink calls straight into a CloudService (still through a full
encode/decode cycle); TcpLink runs a reader thread so cloud-initiated
model pushes are received even while the pipeline is between sends.
"""

from __future__ import annotations

import queue
import socket
import threading
from typing import Callable, Protocol

from .. import protocol as P


class LinkError(Exception):
    """Cloud unreachable or the exchange failed mid-flight."""


class CloudLink(Protocol):
    bytes_by_topic: dict[str, int]

    def send(self, envelope: P.Envelope) -> P.Envelope: ...
    def send_oneway(self, envelope: P.Envelope) -> None: ...
    def close(self) -> None: ...


class _Counter:
    def __init__(self):
        self.bytes_by_topic: dict[str, int] = {}

    def _count(self, topic: P.Topic, nbytes: int) -> None:
        key = topic.value
        self.bytes_by_topic[key] = self.bytes_by_topic.get(key, 0) + nbytes


class InProcessLink(_Counter):
    """Direct link to a CloudService living in the same process."""

    def __init__(self, service, on_model_update: Callable[[P.Envelope], None] | None = None):
        super().__init__()
        self._service = service
        self.on_model_update = on_model_update

    def send(self, envelope: P.Envelope) -> P.Envelope:
        line = P.encode(envelope)
        self._count(envelope.topic, len(line))
        ack_line = self._service.handle_line(line)
        if ack_line is None:
            raise LinkError("cloud returned no acknowledgement")
        return P.decode(ack_line)

    def send_oneway(self, envelope: P.Envelope) -> None:
        line = P.encode(envelope)
        self._count(envelope.topic, len(line))
        self._service.handle_line(line)

    def close(self) -> None:
        pass


class TcpLink(_Counter):
    """Persistent TCP connection with a background reader.

    send() blocks until the matching ACK arrives; MODEL_UPDATE frames
    read in the meantime are handed to on_model_update (a thread-safe
    queue feed on the agent side).
    """

    def __init__(self, host: str, port: int,
                 on_model_update: Callable[[P.Envelope], None] | None = None,
                 timeout: float = 10.0):
        super().__init__()
        self._host = host
        self._port = port
        self._timeout = timeout
        self.on_model_update = on_model_update
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._acks: queue.Queue = queue.Queue()
        self._write_lock = threading.Lock()
        self._closing = False

    # -- connection management ------------------------------------------------

    def _ensure_connected(self) -> None:
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection((self._host, self._port), timeout=self._timeout)
        except OSError as exc:
            raise LinkError(f"cannot reach cloud at {self._host}:{self._port}: {exc}") from exc
        sock.settimeout(self._timeout)
        self._sock = sock
        self._acks = queue.Queue()
        self._closing = False
        self._reader = threading.Thread(target=self._read_loop, name="edge-link-reader", daemon=True)
        self._reader.start()

    def _drop_connection(self) -> None:
        sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def _read_loop(self) -> None:
        sock = self._sock
        buf = P.FrameBuffer()
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                for raw in buf.feed(data):
                    try:
                        env = P.decode(raw)
                    except P.ProtocolError:
                        continue
                    if env.topic is P.Topic.ACK:
                        self._acks.put(env)
                    elif env.topic is P.Topic.MODEL_UPDATE and self.on_model_update:
                        self.on_model_update(env)
        except OSError:
            pass
        finally:
            if not self._closing:
                self._acks.put(None)  # wake any waiter with a failure marker

    # -- sending ----------------------------------------------------------------

    def send(self, envelope: P.Envelope) -> P.Envelope:
        self._ensure_connected()
        line = P.encode(envelope)
        try:
            with self._write_lock:
                self._sock.sendall(line)
        except OSError as exc:
            self._drop_connection()
            raise LinkError(f"send failed: {exc}") from exc
        self._count(envelope.topic, len(line))
        while True:
            try:
                ack = self._acks.get(timeout=self._timeout)
            except queue.Empty:
                self._drop_connection()
                raise LinkError("timed out waiting for acknowledgement") from None
            if ack is None:
                self._drop_connection()
                raise LinkError("connection lost waiting for acknowledgement")
            payload = ack.payload
            if payload.ack_topic == envelope.topic.value and payload.ack_seq == envelope.seq:
                return ack
            # unrelated ack (stale); keep waiting

    def send_oneway(self, envelope: P.Envelope) -> None:
        self._ensure_connected()
        line = P.encode(envelope)
        try:
            with self._write_lock:
                self._sock.sendall(line)
        except OSError as exc:
            self._drop_connection()
            raise LinkError(f"send failed: {exc}") from exc
        self._count(envelope.topic, len(line))

    def close(self) -> None:
        self._closing = True
        self._drop_connection()
