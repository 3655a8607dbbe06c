"""The maintenance cloud: speed-layer ingest through the CEP rule set,
alerting and failure prediction, the order workflow, and the batch layer
(raw segment storage, retrain, model distribution).

One CloudService instance backs both transports (the TCP line listener
and the HTTP API) and the in-process harness topology.  Stores are
append-only logs with in-memory indexes; every mutation is serialized
behind per-store locks.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from typing import Callable

from .. import lof as L
from .. import protocol as P
from .config import CloudConfig
from .orders import ErpStub, OrderBook
from .predict import FaultCatalog, NoDataError, predict_failure
from .retrain import RetrainError, retrain_model
from .rules import RuleSet
from .stores import LogStore, RawStore

logger = logging.getLogger(__name__)


class CloudService:
    def __init__(self, config: CloudConfig, catalog: FaultCatalog | None = None,
                 clock_ms=None):
        self._config = config
        self._clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        os.makedirs(config.store_dir, exist_ok=True)
        if catalog is None:
            if config.catalog_path is None:
                raise ValueError("need a fault catalog (catalog_path or instance)")
            catalog = FaultCatalog.from_file(config.catalog_path)
        self.catalog = catalog

        sd = config.store_dir
        self.events = LogStore(os.path.join(sd, "events.log"))
        self.alerts = LogStore(os.path.join(sd, "alerts.log"))
        self.predictions = LogStore(os.path.join(sd, "predictions.log"))
        self.raw = RawStore(os.path.join(sd, "raw"))
        self.rules = RuleSet(LogStore(os.path.join(sd, "rules.log")),
                             merge_threshold=config.jaccard_merge)
        self.erp = ErpStub(os.path.join(sd, "erp-orders.log"))
        self.orders = OrderBook(LogStore(os.path.join(sd, "orders.log")),
                                self.erp, self._clock_ms)
        self._models_dir = os.path.join(sd, "models")
        os.makedirs(self._models_dir, exist_ok=True)

        self._ingest_lock = threading.Lock()
        self._event_keys: set[tuple[str, int]] = set()
        self._events_by_equipment: dict[str, list[dict]] = {}
        for obj in self.events.all():
            self._event_keys.add((obj["edge_id"], obj["seq"]))
            self._events_by_equipment.setdefault(obj["equipment_id"], []).append(obj)

        self._alert_index: dict[str, dict] = {a["alert_id"]: a for a in self.alerts.all()}
        self._prediction_index: dict[str, dict] = {
            p["prediction_id"]: p for p in self.predictions.all()}

        # batch layer state
        self._latest_model: dict[str, L.ModelSnapshot] = {}
        self._edge_versions: dict[str, int] = {}
        self._pending_push: dict[str, int] = {}
        self._push_targets: dict[str, Callable[[P.Envelope], dict | None]] = {}
        self._cloud_seq = P.SeqCounter()
        self._seq_seen: dict[tuple[str, str], int] = {}
        self._dist_lock = threading.Lock()
        self.fail_event_storage = False  # test hook: simulate storage failure

    # -- transport entry points ---------------------------------------------------

    def handle_line(self, line: bytes) -> bytes | None:
        """Decode one frame, dispatch, return the encoded ack (or None for
        frames that are themselves acks)."""
        try:
            env = P.decode(line)
        except P.ProtocolError as exc:
            logger.warning("undecodable frame dropped: %s", exc)
            return None
        ack = self.handle_envelope(env)
        return P.encode(ack) if ack is not None else None

    def handle_envelope(self, env: P.Envelope) -> P.Envelope | None:
        self._check_seq(env)
        if env.topic is P.Topic.ANOMALY:
            ok, info = self.ingest_event(env)
        elif env.topic is P.Topic.RULE_PROPOSAL:
            ok, info = True, self.merge_rule(env.payload)
        elif env.topic is P.Topic.RAW_BATCH:
            ok, info = True, self.ingest_raw_chunk(env.edge_id, env.payload)
        elif env.topic is P.Topic.ACK:
            self._record_edge_ack(env)
            return None
        else:  # MODEL_UPDATE arriving at the cloud is a direction error
            ok, info = False, {"error": "unsupported-direction"}
        return self._ack(env, ok, info)

    def _ack(self, env: P.Envelope, ok: bool, info: dict) -> P.Envelope:
        return P.Envelope(
            topic=P.Topic.ACK,
            edge_id=env.edge_id,
            seq=self._cloud_seq.next(P.Topic.ACK),
            timestamp_ms=self._clock_ms(),
            payload=P.AckPayload(
                ack_topic=env.topic.value, ack_seq=env.seq, ok=ok, info=info),
        )

    def _check_seq(self, env: P.Envelope) -> None:
        key = (env.edge_id, env.topic.value)
        last = self._seq_seen.get(key)
        if last is not None and env.seq <= last:
            logger.warning("seq order violation from %s/%s: %d after %d",
                           env.edge_id, env.topic.value, env.seq, last)
        else:
            self._seq_seen[key] = env.seq

    # -- speed layer -------------------------------------------------------------

    def ingest_event(self, env: P.Envelope) -> tuple[bool, dict]:
        """Persist an anomaly event, evaluate CEP rules, raise an alert
        and run failure prediction when a rule matches or the score is
        past critical.  Replays by (edge_id, seq) deduplicate."""
        p = env.payload
        key = (env.edge_id, env.seq)
        with self._ingest_lock:
            if key in self._event_keys:
                return True, {"duplicate": True}
            matched = self.rules.evaluate(p.features, p.score, p.equipment_id)
            critical = self._config.critical_multiplier * p.threshold_at_detection
            raise_alert = bool(matched) or p.score > critical
            record_id = f"ev-{len(self.events) + 1:06d}"
            alert_id = f"al-{len(self.alerts) + 1:06d}" if raise_alert else None
            record = {
                "record_id": record_id,
                "edge_id": env.edge_id,
                "seq": env.seq,
                "received_at_ms": self._clock_ms(),
                "equipment_id": p.equipment_id,
                "window_index": p.window_index,
                "score": p.score,
                "features": list(p.features),
                "threshold_at_detection": p.threshold_at_detection,
                "model_version": p.model_version,
                "matched_rule_ids": matched,
                "alert_id": alert_id,
            }
            try:
                if self.fail_event_storage:
                    raise OSError("simulated storage failure")
                self.events.append(record)
            except OSError as exc:
                logger.error("event store failure: %s", exc)
                return False, {"error": "storage", "detail": str(exc)}
            self._event_keys.add(key)
            self._events_by_equipment.setdefault(p.equipment_id, []).append(record)
            known = self._edge_versions.get(env.edge_id, 1)
            self._edge_versions[env.edge_id] = max(known, p.model_version)

            info: dict = {"record_id": record_id}
            if raise_alert:
                severity = "critical" if p.score >= critical else "warning"
                prediction = self._predict_locked(p.equipment_id)
                alert = {
                    "alert_id": alert_id,
                    "equipment_id": p.equipment_id,
                    "severity": severity,
                    "score": p.score,
                    "window_index": p.window_index,
                    "received_at_ms": record["received_at_ms"],
                    "record_id": record_id,
                    "matched_rule_ids": matched,
                    "prediction_id": prediction["prediction_id"],
                }
                self.alerts.append(alert)
                self._alert_index[alert_id] = alert
                info["alert_id"] = alert_id
            return True, info

    def merge_rule(self, payload: P.RuleProposalPayload) -> dict:
        return self.rules.merge_proposal(payload)

    # -- prediction --------------------------------------------------------------

    def _predict_locked(self, equipment_id: str) -> dict:
        events = self._events_by_equipment.get(equipment_id, [])
        prediction = predict_failure(
            self.catalog, events,
            critical_multiplier=self._config.critical_multiplier,
            fit_window=self._config.fit_window)
        prediction["prediction_id"] = f"pr-{len(self.predictions) + 1:06d}"
        prediction["created_ms"] = self._clock_ms()
        self.predictions.append(prediction)
        self._prediction_index[prediction["prediction_id"]] = prediction
        return prediction

    def predict(self, equipment_id: str) -> dict:
        """Fresh failure prediction for an equipment (stored, with id)."""
        with self._ingest_lock:
            if equipment_id not in self._events_by_equipment:
                raise NoDataError(f"no events for equipment {equipment_id}")
            return self._predict_locked(equipment_id)

    def get_prediction(self, prediction_id: str) -> dict:
        pred = self._prediction_index.get(prediction_id)
        if pred is None:
            raise KeyError(prediction_id)
        return dict(pred)

    # -- alerts ---------------------------------------------------------------------

    def list_alerts(self, limit: int = 50, offset: int = 0) -> tuple[list[dict], int]:
        alerts = self.alerts.all()
        alerts.sort(key=lambda a: a["received_at_ms"], reverse=True)
        return alerts[offset:offset + limit], len(alerts)

    def get_alert(self, alert_id: str) -> dict:
        alert = self._alert_index.get(alert_id)
        if alert is None:
            raise KeyError(alert_id)
        return dict(alert)

    def event_records(self) -> list[dict]:
        return self.events.all()

    # -- batch layer -------------------------------------------------------------------

    def ingest_raw_chunk(self, edge_id: str, payload: P.RawBatchChunkPayload) -> dict:
        return self.raw.ingest_chunk(edge_id, payload)

    def retrain(self, edge_id: str) -> L.ModelSnapshot:
        """Retrain from every stored raw record of this edge."""
        records = self.raw.records_for_edge(edge_id)
        features = [fv for _, fv, _ in records]
        prev = self._edge_versions.get(edge_id, 1)
        with self._dist_lock:
            latest = self._latest_model.get(edge_id)
        if latest is not None:
            prev = max(prev, latest.version)
        snapshot = retrain_model(
            features,
            k=self._config.k,
            eps=self._config.eps,
            capacity=self._config.capacity,
            seed=self._config.retrain_seed,
            prev_version=prev,
            min_records=self._config.retrain_min_records,
            normal_quantile=self._config.retrain_normal_quantile,
            threshold_quantile=self._config.retrain_threshold_quantile,
            threshold_factor=self._config.retrain_threshold_factor,
        )
        edge_dir = os.path.join(self._models_dir, edge_id)
        os.makedirs(edge_dir, exist_ok=True)
        L.save_model(snapshot, edge_dir)
        with self._dist_lock:
            self._latest_model[edge_id] = snapshot
        return snapshot

    def register_edge(self, edge_id: str,
                      push: Callable[[P.Envelope], dict | None]) -> None:
        """Transport-level registration of a connected edge; pending
        model pushes are delivered immediately."""
        with self._dist_lock:
            self._push_targets[edge_id] = push
            pending = self._pending_push.pop(edge_id, None)
        for key in list(self._seq_seen):
            if key[0] == edge_id:
                del self._seq_seen[key]
        if pending is not None:
            self._push_to(edge_id)

    def unregister_edge(self, edge_id: str) -> None:
        with self._dist_lock:
            self._push_targets.pop(edge_id, None)

    def distribute(self, edge_id: str | None = None) -> list[dict]:
        """Push the latest retrained model to its edge (or all edges)."""
        with self._dist_lock:
            targets = [edge_id] if edge_id else sorted(self._latest_model)
        results = []
        for eid in targets:
            results.append(self._push_to(eid))
        return results

    def _push_to(self, edge_id: str) -> dict:
        with self._dist_lock:
            snapshot = self._latest_model.get(edge_id)
            push = self._push_targets.get(edge_id)
        if snapshot is None:
            return {"edge_id": edge_id, "status": "no-model"}
        if push is None:
            with self._dist_lock:
                self._pending_push[edge_id] = snapshot.version
            return {"edge_id": edge_id, "model_version": snapshot.version,
                    "status": "pending"}
        env = P.Envelope(
            topic=P.Topic.MODEL_UPDATE,
            edge_id=edge_id,
            seq=self._cloud_seq.next(P.Topic.MODEL_UPDATE),
            timestamp_ms=self._clock_ms(),
            payload=P.ModelUpdatePayload(
                model_version=snapshot.version,
                k=snapshot.params.k,
                threshold=snapshot.threshold,
                reference_points=snapshot.reference.points,
                eps=snapshot.params.eps,
            ),
        )
        try:
            immediate = push(env)
        except Exception as exc:  # connection died mid-push
            logger.warning("push to %s failed: %s", edge_id, exc)
            with self._dist_lock:
                self._pending_push[edge_id] = snapshot.version
                self._push_targets.pop(edge_id, None)
            return {"edge_id": edge_id, "model_version": snapshot.version,
                    "status": "pending"}
        if immediate is None:
            return {"edge_id": edge_id, "model_version": snapshot.version,
                    "status": "sent"}
        accepted = bool(immediate.get("accepted"))
        with self._dist_lock:
            self._edge_versions[edge_id] = int(immediate.get("model_version", 0))
        return {"edge_id": edge_id, "model_version": snapshot.version,
                "status": "accepted" if accepted else "rejected"}

    def _record_edge_ack(self, env: P.Envelope) -> None:
        p = env.payload
        if p.ack_topic == P.Topic.MODEL_UPDATE.value:
            version = int(p.info.get("model_version", 0))
            with self._dist_lock:
                self._edge_versions[env.edge_id] = max(
                    self._edge_versions.get(env.edge_id, 0), version)
            logger.info("edge %s %s model update (active v%d)",
                        env.edge_id, "accepted" if p.ok else "rejected", version)

    def edge_version(self, edge_id: str) -> int:
        return self._edge_versions.get(edge_id, 1)

    def latest_model(self, edge_id: str) -> L.ModelSnapshot | None:
        with self._dist_lock:
            return self._latest_model.get(edge_id)

    # -- orders -----------------------------------------------------------------------

    def create_order(self, prediction_id: str) -> dict:
        prediction = self.get_prediction(prediction_id)
        return self.orders.create(prediction)

    def close(self) -> None:
        for store in (self.events, self.alerts, self.predictions):
            store.close()
