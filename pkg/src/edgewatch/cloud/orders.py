"""Maintenance orders and the ERP stub.

Order lifecycle: PROPOSED -> APPROVED -> SUBMITTED, or PROPOSED ->
REJECTED; nothing else.  Approval submits to the ERP stub, which records
each order as one canonical line in an append-only file and returns a
receipt id.  If the stub is down the order stays APPROVED and can be
retried with submit_pending.
"""

from __future__ import annotations

import os
import threading
from enum import Enum

from .. import canon
from .stores import LogStore


class OrderStatus(str, Enum):
    PROPOSED = "PROPOSED"
    APPROVED = "APPROVED"
    SUBMITTED = "SUBMITTED"
    REJECTED = "REJECTED"


class StateError(RuntimeError):
    """Illegal order state transition."""


class ErpUnavailable(RuntimeError):
    """ERP stub not reachable; order stays APPROVED for retry."""


class ErpStub:
    """Stand-in for the enterprise resource planning system: an
    append-only order log with injectable unavailability for tests."""

    def __init__(self, path: str):
        self._path = path
        self._lock = threading.Lock()
        self.available = True
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        if not os.path.exists(path):
            open(path, "ab").close()
        self._count = len(canon.read_log(path))

    def submit(self, order: dict, submitted_ms: int) -> str:
        if not self.available:
            raise ErpUnavailable("erp stub is down")
        with self._lock:
            receipt_id = f"erp-{self._count + 1:06d}"
            line = canon.dump_line({
                "receipt_id": receipt_id,
                "order_id": order["order_id"],
                "equipment_id": order["equipment_id"],
                "part": order["part"],
                "action": order["action"],
                "submitted_ms": submitted_ms,
            })
            with open(self._path, "ab") as fh:
                fh.write(line)
            self._count += 1
            return receipt_id


class OrderBook:
    """Orders with their audit trail, folded from an append-only log."""

    def __init__(self, store: LogStore, erp: ErpStub, clock_ms):
        self._store = store
        self._erp = erp
        self._clock_ms = clock_ms
        self._lock = threading.Lock()
        self._orders: dict[str, dict] = {}
        self._order_seq = 0
        for obj in store.all():
            self._orders[obj["order_id"]] = obj
            n = int(obj["order_id"].rsplit("-", 1)[1])
            self._order_seq = max(self._order_seq, n)

    def _persist(self, order: dict) -> None:
        self._store.append(order)
        self._orders[order["order_id"]] = order

    def get(self, order_id: str) -> dict:
        with self._lock:
            order = self._orders.get(order_id)
        if order is None:
            raise KeyError(order_id)
        return dict(order)

    def all(self) -> list[dict]:
        with self._lock:
            return [dict(o) for o in self._orders.values()]

    def create(self, prediction: dict) -> dict:
        """New PROPOSED order for the predicted part and action."""
        with self._lock:
            self._order_seq += 1
            now = self._clock_ms()
            order = {
                "order_id": f"order-{self._order_seq:06d}",
                "equipment_id": prediction["equipment_id"],
                "part": prediction["part"],
                "action": prediction["action"],
                "status": OrderStatus.PROPOSED.value,
                "prediction_id": prediction.get("prediction_id"),
                "erp_receipt": None,
                "transitions": {"PROPOSED": now},
            }
            self._persist(order)
            return dict(order)

    def approve(self, order_id: str) -> dict:
        """PROPOSED -> APPROVED, then ERP submission -> SUBMITTED.

        ERP down leaves the order APPROVED (retry with submit_pending).
        """
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise KeyError(order_id)
            if order["status"] != OrderStatus.PROPOSED.value:
                raise StateError(
                    f"cannot approve order in state {order['status']}")
            order = dict(order)
            now = self._clock_ms()
            order["status"] = OrderStatus.APPROVED.value
            order["transitions"] = {**order["transitions"], "APPROVED": now}
            self._persist(order)
            return self._try_submit(order)

    def reject(self, order_id: str) -> dict:
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise KeyError(order_id)
            if order["status"] != OrderStatus.PROPOSED.value:
                raise StateError(
                    f"cannot reject order in state {order['status']}")
            order = dict(order)
            order["status"] = OrderStatus.REJECTED.value
            order["transitions"] = {**order["transitions"], "REJECTED": self._clock_ms()}
            self._persist(order)
            return dict(order)

    def submit_pending(self, order_id: str) -> dict:
        """Retry the ERP submission of an APPROVED order."""
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise KeyError(order_id)
            if order["status"] != OrderStatus.APPROVED.value:
                raise StateError(
                    f"cannot submit order in state {order['status']}")
            return self._try_submit(dict(order))

    def _try_submit(self, order: dict) -> dict:
        try:
            receipt = self._erp.submit(order, self._clock_ms())
        except ErpUnavailable:
            return dict(order)  # stays APPROVED
        order["status"] = OrderStatus.SUBMITTED.value
        order["erp_receipt"] = receipt
        order["transitions"] = {**order["transitions"], "SUBMITTED": self._clock_ms()}
        self._persist(order)
        return dict(order)
