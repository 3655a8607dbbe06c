"""The speed-layer edge node.

Per window: extract features, score against the current model snapshot,
spool the raw record, publish an ANOMALY envelope when the score exceeds
the threshold, extract and publish a detection rule after a streak of
consecutive anomalies, and admit safely-normal windows into the model.

The pipeline is single-threaded and owns the model; pushed model updates
are queued by the transport and applied atomically between windows, so
every published (score, model_version) pair is consistent.  The first
k+1 windows of a run are warmup: spooled and admitted unconditionally,
never flagged.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

from .. import canon
from .. import lof as L
from .. import protocol as P
from ..features import Window, extract_features, samples_from_values, window_stream
from .config import EdgeConfig
from .links import CloudLink, LinkError
from .spool import Spool

logger = logging.getLogger(__name__)

UPLOAD_CHUNK_RECORDS = 500


@dataclass(frozen=True)
class WindowOutcome:
    window_index: int
    score: float
    is_anomaly: bool
    model_version: int
    warmup: bool
    published_rule_id: str | None = None


@dataclass(frozen=True)
class UploadResult:
    ok: bool
    segments_sent: int
    records_sent: int
    chunks_sent: int
    segments_pending: int
    detail: str = ""


class EdgeAgent:
    def __init__(self, config: EdgeConfig, link: CloudLink, clock_ms=None):
        self._config = config
        self._link = link
        self._clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        os.makedirs(config.state_dir, exist_ok=True)
        self._spool = Spool(config.spool_dir, config.edge_id, config.spool_roll)
        self._model = self._load_startup_model()
        self._model_lock = threading.Lock()
        self._seq = P.SeqCounter()
        self._retry: deque[P.Envelope] = deque(maxlen=config.queue_limit)
        self._updates: queue.Queue = queue.Queue()
        self._streak: list[tuple[tuple[float, ...], float]] = []
        resume_from = self._spool.last_window_index()
        self._window_counter = 0 if resume_from is None else resume_from + 1
        self._windows_in_run = 0
        self._windows_total = 0
        self.anomalies_published = 0
        self.rules_published = 0
        if hasattr(link, "on_model_update"):
            link.on_model_update = self.enqueue_model_update

    # -- model lifecycle --------------------------------------------------------

    def _load_startup_model(self) -> L.ModelSnapshot:
        """Newest model wins between the configured initial model and any
        version persisted in the state directory by earlier updates."""
        candidates = []
        if self._config.initial_model:
            candidates.append(self._config.initial_model)
        for name in os.listdir(self._config.state_dir):
            if name.startswith("model-v"):
                candidates.append(os.path.join(self._config.state_dir, name))
        best = None
        for path in candidates:
            try:
                model = L.load_model(path, capacity=self._config.capacity)
            except (OSError, ValueError, KeyError, canon.CanonError) as exc:
                logger.warning("ignoring unreadable model file %s: %s", path, exc)
                continue
            if best is None or model.version > best.version:
                best = model
        if best is None:
            raise FileNotFoundError(
                "no loadable initial model; set initial_model in the edge config")
        return best

    @property
    def model(self) -> L.ModelSnapshot:
        with self._model_lock:
            return self._model

    @property
    def retry_queue_depth(self) -> int:
        return len(self._retry)

    @property
    def spool(self) -> Spool:
        return self._spool

    @property
    def spool_bytes(self) -> int:
        return self._spool.bytes_written

    def pending_updates(self) -> int:
        return self._updates.qsize()

    def enqueue_model_update(self, envelope: P.Envelope) -> None:
        """Called by the transport reader thread; applied between windows."""
        self._updates.put(envelope)

    def apply_model_update(self, payload: P.ModelUpdatePayload) -> tuple[bool, int]:
        """Accept iff strictly newer and well-formed; swap is atomic.

        Returns (accepted, active model version).
        """
        with self._model_lock:
            current = self._model
            if payload.model_version <= current.version:
                return False, current.version
            if payload.reference_points and len(payload.reference_points[0]) != self._config.feature_dim:
                return False, current.version
            if len(payload.reference_points) <= payload.k:
                return False, current.version
            if len(payload.reference_points) > self._config.capacity:
                return False, current.version
            try:
                model = L.ModelSnapshot(
                    version=payload.model_version,
                    params=L.LofParams(k=payload.k, eps=payload.eps),
                    reference=L.ReferenceSet(
                        points=payload.reference_points, capacity=self._config.capacity),
                    threshold=payload.threshold,
                    admit_below=L.derive_admit_below(payload.threshold),
                )
            except ValueError:
                return False, current.version
            L.save_model(model, self._config.state_dir)
            self._model = model
            self._streak.clear()  # scores across models are not comparable
            return True, model.version

    def _drain_model_updates(self) -> None:
        while True:
            try:
                env = self._updates.get_nowait()
            except queue.Empty:
                return
            accepted, version = self.apply_model_update(env.payload)
            ack = P.Envelope(
                topic=P.Topic.ACK,
                edge_id=self._config.edge_id,
                seq=self._seq.next(P.Topic.ACK),
                timestamp_ms=self._clock_ms(),
                payload=P.AckPayload(
                    ack_topic=P.Topic.MODEL_UPDATE.value,
                    ack_seq=env.seq,
                    ok=accepted,
                    info={"accepted": accepted, "model_version": version},
                ),
            )
            try:
                self._link.send_oneway(ack)
            except LinkError as exc:
                logger.warning("could not ack model update: %s", exc)

    # -- pipeline -------------------------------------------------------------

    def process_values(self, values: Iterable[float]) -> list[WindowOutcome]:
        return list(self.iter_values(values))

    def iter_values(self, values: Iterable[float]) -> Iterator[WindowOutcome]:
        samples = samples_from_values(values)
        for window in window_stream(samples, self._config.window_size, self._config.hop):
            yield self.process_window(window)

    def process_window(self, window: Window) -> WindowOutcome:
        self._drain_model_updates()
        self._flush_retry()
        window_index = self._window_counter
        self._window_counter += 1
        fv = extract_features(window, self._config.band_edges).as_tuple()

        with self._model_lock:
            model = self._model
        warmup = self._windows_in_run < self._config.k + 1
        published_rule = None
        if warmup:
            score = self._score_if_possible(model, fv)
            self._spool.append(window_index, fv, score)
            new_model = model.with_admitted(fv)
            is_anomaly = False
        else:
            result = L.score_window(model, fv)
            score = result.score
            is_anomaly = result.is_anomaly
            self._spool.append(window_index, fv, score)
            if is_anomaly:
                self._publish_anomaly(window_index, fv, score, model)
                self._streak.append((fv, score))
                if len(self._streak) == self._config.rule_streak:
                    published_rule = self._publish_rule()
            else:
                self._streak.clear()
            new_model = L.maybe_admit(model, fv, score)

        with self._model_lock:
            # the pipeline is the only reference writer; an update may have
            # swapped models mid-window, in which case its snapshot wins
            if self._model is model:
                self._model = new_model
        self._windows_in_run += 1
        self._windows_total += 1
        if self._windows_total % 50 == 0:
            self.write_status()
        if self._config.upload_every and self._windows_in_run % self._config.upload_every == 0:
            self.trigger_upload()
        return WindowOutcome(
            window_index=window_index,
            score=score,
            is_anomaly=is_anomaly,
            model_version=model.version,
            warmup=warmup,
            published_rule_id=published_rule,
        )

    @staticmethod
    def _score_if_possible(model: L.ModelSnapshot, fv) -> float:
        if len(model.reference) > model.params.k and model.reference.dim == len(fv):
            return L.score_window(model, fv).score
        return 0.0

    # -- publishing -------------------------------------------------------------

    def _publish_anomaly(self, window_index: int, fv, score: float, model: L.ModelSnapshot) -> None:
        payload = P.AnomalyEventPayload(
            equipment_id=self._config.equipment_id,
            window_index=window_index,
            score=score,
            features=fv,
            threshold_at_detection=model.threshold,
            model_version=model.version,
        )
        env = P.Envelope(
            topic=P.Topic.ANOMALY, edge_id=self._config.edge_id,
            seq=self._seq.next(P.Topic.ANOMALY),
            timestamp_ms=self._clock_ms(), payload=payload)
        self.anomalies_published += 1
        self._enqueue_publish(env)

    def _publish_rule(self) -> str | None:
        rule = L.extract_rule(
            [fv for fv, _ in self._streak],
            [s for _, s in self._streak],
            margin=self._config.rule_margin,
            min_support=self._config.rule_streak,
            eps=self._config.eps,
        )
        if rule is None:
            return None
        payload = P.RuleProposalPayload(
            rule_id=rule.rule_id, lower=rule.lower, upper=rule.upper,
            min_score=rule.min_score, support_count=rule.support_count)
        env = P.Envelope(
            topic=P.Topic.RULE_PROPOSAL, edge_id=self._config.edge_id,
            seq=self._seq.next(P.Topic.RULE_PROPOSAL),
            timestamp_ms=self._clock_ms(), payload=payload)
        self.rules_published += 1
        self._enqueue_publish(env)
        return rule.rule_id

    def _enqueue_publish(self, env: P.Envelope) -> None:
        if len(self._retry) == self._retry.maxlen:
            logger.warning("publish queue full; dropping oldest event")
        self._retry.append(env)  # deque(maxlen=...) drops the oldest itself
        self._flush_retry()

    def _flush_retry(self) -> None:
        while self._retry:
            env = self._retry[0]
            try:
                ack = self._link.send(env)
            except LinkError as exc:
                logger.debug("cloud unreachable, %d events queued: %s", len(self._retry), exc)
                return
            if not ack.payload.ok:
                logger.warning("cloud nacked %s seq=%d: %s", env.topic.value, env.seq, ack.payload.info)
                return
            self._retry.popleft()

    # -- batch upload -------------------------------------------------------------

    def trigger_upload(self) -> UploadResult:
        """Send every closed spool segment as RAW_BATCH chunks.

        A segment is deleted locally only after the cloud acks its final
        chunk; on failure the remaining segments are kept for the next
        trigger (idempotent by segment_id).
        """
        self._spool.close_active()
        segments = self._spool.closed_segments()
        if not segments:
            return UploadResult(ok=True, segments_sent=0, records_sent=0,
                                chunks_sent=0, segments_pending=0)
        sent = records = chunks_sent = 0
        for i, segment in enumerate(segments):
            recs = segment.records
            chunks = [recs[i:i + UPLOAD_CHUNK_RECORDS]
                      for i in range(0, len(recs), UPLOAD_CHUNK_RECORDS)]
            total = len(chunks)
            for idx, chunk in enumerate(chunks):
                payload = P.RawBatchChunkPayload(
                    chunk_index=idx, total_chunks=total,
                    records=chunk, segment_id=segment.segment_id)
                env = P.Envelope(
                    topic=P.Topic.RAW_BATCH, edge_id=self._config.edge_id,
                    seq=self._seq.next(P.Topic.RAW_BATCH),
                    timestamp_ms=self._clock_ms(), payload=payload)
                try:
                    ack = self._link.send(env)
                except LinkError as exc:
                    return UploadResult(
                        ok=False, segments_sent=sent, records_sent=records,
                        chunks_sent=chunks_sent, segments_pending=len(segments) - i,
                        detail=str(exc))
                if not ack.payload.ok:
                    return UploadResult(
                        ok=False, segments_sent=sent, records_sent=records,
                        chunks_sent=chunks_sent, segments_pending=len(segments) - i,
                        detail=f"cloud nacked chunk {idx} of {segment.segment_id}")
                chunks_sent += 1
            self._spool.delete_segment(segment.segment_id)
            sent += 1
            records += len(recs)
        self.write_status()
        return UploadResult(ok=True, segments_sent=sent, records_sent=records,
                            chunks_sent=chunks_sent, segments_pending=0)

    # -- status -------------------------------------------------------------------

    def write_status(self) -> None:
        segments, spooled = self._spool.record_counts()
        obj = {
            "edge_id": self._config.edge_id,
            "equipment_id": self._config.equipment_id,
            "model_version": self.model.version,
            "windows_processed": self._windows_total,
            "anomalies_published": self.anomalies_published,
            "rules_published": self.rules_published,
            "retry_queue_depth": len(self._retry),
            "spool_segments": segments,
            "spool_records": spooled,
            "updated_ms": self._clock_ms(),
        }
        path = os.path.join(self._config.state_dir, "status")
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(canon.dump_line(obj))
        os.replace(tmp, path)

    def close(self) -> None:
        self.write_status()
        self._spool.close()
        self._link.close()

    def abandon(self) -> None:
        """Simulate a crash: drop everything without flushing or closing."""
        self._spool.close()
