"""Operator-facing HTTP API.

All bodies, request and response, are canonical object notation.

    GET  /alerts?limit&offset          newest first
    GET  /alerts/{id}
    GET  /equipment/{id}/prediction    fresh prediction for the equipment
    GET  /orders?limit&offset
    POST /orders                       body {"prediction_id": ...}
    POST /orders/{id}/approve
    POST /orders/{id}/reject
    GET  /rules?limit&offset
    POST /admin/retrain                body {"edge_id": ...} (optional)
    POST /admin/distribute             body {"edge_id": ...} (optional)

Errors: 404 not-found, 400 bad-request, 409 conflict (illegal order
transition or refused retrain).
"""

from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .. import canon
from .orders import StateError
from .predict import NoDataError
from .retrain import RetrainError
from .service import CloudService

logger = logging.getLogger(__name__)


def _model_summary(snapshot) -> dict:
    return {
        "model_version": snapshot.version,
        "k": snapshot.params.k,
        "eps": snapshot.params.eps,
        "threshold": snapshot.threshold,
        "reference_size": len(snapshot.reference),
    }


class _ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> CloudService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("http: " + fmt, *args)

    # -- plumbing ---------------------------------------------------------------

    def _send(self, status: int, obj) -> None:
        body = canon.dump_line(obj)
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, error: str, detail: str = "") -> None:
        self._send(status, {"error": error, "detail": detail})

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        obj = canon.loads(raw)
        if not isinstance(obj, dict):
            raise canon.CanonError("body must be an object")
        return obj

    def _paging(self, query: dict) -> tuple[int, int]:
        limit = int(query.get("limit", ["50"])[0])
        offset = int(query.get("offset", ["0"])[0])
        if limit < 0 or offset < 0:
            raise ValueError("limit and offset must be non-negative")
        return limit, offset

    # -- routing ----------------------------------------------------------------

    def do_GET(self) -> None:
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            query = parse_qs(url.query)
            if parts == ["alerts"]:
                limit, offset = self._paging(query)
                alerts, total = self.service.list_alerts(limit=limit, offset=offset)
                return self._send(200, {"alerts": alerts, "total": total})
            if len(parts) == 2 and parts[0] == "alerts":
                return self._send(200, self.service.get_alert(parts[1]))
            if len(parts) == 3 and parts[0] == "equipment" and parts[2] == "prediction":
                return self._send(200, self.service.predict(parts[1]))
            if parts == ["orders"]:
                limit, offset = self._paging(query)
                orders = self.service.orders.all()
                orders.sort(key=lambda o: o["order_id"], reverse=True)
                return self._send(200, {"orders": orders[offset:offset + limit],
                                        "total": len(orders)})
            if len(parts) == 2 and parts[0] == "orders":
                return self._send(200, self.service.orders.get(parts[1]))
            if parts == ["rules"]:
                limit, offset = self._paging(query)
                rules = [r.to_obj() for r in self.service.rules.rules()]
                rules.sort(key=lambda r: r["rule_id"])
                return self._send(200, {"rules": rules[offset:offset + limit],
                                        "total": len(rules)})
            return self._error(404, "not-found", f"no route for {url.path}")
        except (KeyError, NoDataError) as exc:
            return self._error(404, "not-found", str(exc))
        except (ValueError, canon.CanonError) as exc:
            return self._error(400, "bad-request", str(exc))

    def do_POST(self) -> None:
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if parts == ["orders"]:
                body = self._body()
                prediction_id = body.get("prediction_id")
                if not isinstance(prediction_id, str) or not prediction_id:
                    return self._error(400, "bad-request", "prediction_id required")
                return self._send(200, self.service.create_order(prediction_id))
            if len(parts) == 3 and parts[0] == "orders" and parts[2] == "approve":
                return self._send(200, self.service.orders.approve(parts[1]))
            if len(parts) == 3 and parts[0] == "orders" and parts[2] == "reject":
                return self._send(200, self.service.orders.reject(parts[1]))
            if parts == ["admin", "retrain"]:
                body = self._body()
                edge_id = body.get("edge_id")
                targets = [edge_id] if edge_id else self.service.raw.edges()
                if not targets:
                    return self._error(409, "conflict", "no raw data stored")
                models = {eid: _model_summary(self.service.retrain(eid))
                          for eid in targets}
                return self._send(200, {"models": models})
            if parts == ["admin", "distribute"]:
                body = self._body()
                results = self.service.distribute(body.get("edge_id"))
                return self._send(200, {"results": results})
            return self._error(404, "not-found", f"no route for {url.path}")
        except KeyError as exc:
            return self._error(404, "not-found", str(exc))
        except StateError as exc:
            return self._error(409, "conflict", str(exc))
        except RetrainError as exc:
            return self._error(409, "conflict", str(exc))
        except (ValueError, canon.CanonError) as exc:
            return self._error(400, "bad-request", str(exc))


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: CloudService, host: str = "127.0.0.1", port: int = 7780):
        super().__init__((host, port), _ApiHandler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="cloud-http", daemon=True)
        thread.start()
        return thread
