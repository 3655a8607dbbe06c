"""TCP listener for the line protocol (speed layer and batch uploads).

Each connection is handled on its own thread; the first decoded frame
registers the connection's edge_id so retrained models can be pushed
down the same socket.
"""

from __future__ import annotations

import logging
import socketserver
import threading

from .. import protocol as P
from .service import CloudService

logger = logging.getLogger(__name__)


class _IngestHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        service: CloudService = self.server.service  # type: ignore[attr-defined]
        buf = P.FrameBuffer()
        write_lock = threading.Lock()
        registered: str | None = None

        def push(env: P.Envelope):
            line = P.encode(env)
            with write_lock:
                self.request.sendall(line)
            return None  # result arrives later as an ACK frame

        try:
            while True:
                data = self.request.recv(65536)
                if not data:
                    break
                for raw in buf.feed(data):
                    if registered is None:
                        try:
                            edge_id = P.decode(raw).edge_id
                        except P.ProtocolError:
                            edge_id = None
                        if edge_id:
                            registered = edge_id
                            service.register_edge(edge_id, push)
                    response = service.handle_line(raw)
                    if response is not None:
                        with write_lock:
                            self.request.sendall(response)
        except OSError as exc:
            logger.debug("connection dropped: %s", exc)
        finally:
            if registered is not None:
                service.unregister_edge(registered)


class IngestServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: CloudService, host: str = "127.0.0.1", port: int = 7700):
        super().__init__((host, port), _IngestHandler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="cloud-tcp", daemon=True)
        thread.start()
        return thread
