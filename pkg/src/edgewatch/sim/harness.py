"""Scenario orchestration: boot cloud and edge (in-process or over
loopback TCP), stream the synthetic scenario, trigger one batch
upload + retrain + distribute at the configured point, and measure
detection quality and bandwidth on real byte counters.
"""

from __future__ import annotations

import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Iterable

from .. import lof as L
from .. import protocol as P
from ..cloud.config import CloudConfig
from ..cloud.predict import FaultCatalog
from ..cloud.retrain import RetrainError
from ..cloud.service import CloudService
from ..cloud.tcp import IngestServer
from ..edge.agent import EdgeAgent
from ..edge.config import EdgeConfig
from ..edge.links import InProcessLink, TcpLink
from ..features import Window, extract_features, samples_from_values, window_stream
from .scenario import ScenarioConfig, catalog_for_scenario, generate_stream

logger = logging.getLogger(__name__)

EDGE_ID = "edge-1"
EQUIPMENT_ID = "fan-1"
CLOCK_EPOCH_MS = 1_700_000_000_000


def deterministic_clock(start_ms: int = CLOCK_EPOCH_MS):
    """Monotonic millisecond clock advancing one tick per call, so
    in-process runs are bit-reproducible."""
    state = {"now": start_ms}

    def clock() -> int:
        state["now"] += 1
        return state["now"]

    return clock


@dataclass(frozen=True)
class Metrics:
    scenario: str
    duration_windows: int
    bytes_raw: int
    bytes_speed: int
    bytes_batch: int
    anomalies_published: int
    rules_published: int
    precision: float
    recall: float
    detection_latency: tuple[int | None, ...]
    orders_created: int
    retrain_cycles: int
    final_model_version: int

    @property
    def speed_ratio(self) -> float:
        return self.bytes_speed / self.bytes_raw if self.bytes_raw else 0.0

    @property
    def detection_latency_max(self):
        if not self.detection_latency:
            return None
        if any(lat is None for lat in self.detection_latency):
            return "miss"
        return max(self.detection_latency)

    def to_row(self) -> dict:
        latency = self.detection_latency_max
        return {
            "scenario": self.scenario,
            "duration_windows": self.duration_windows,
            "bytes_raw": self.bytes_raw,
            "bytes_speed": self.bytes_speed,
            "precision": self.precision,
            "recall": self.recall,
            "detection_latency_max": "" if latency is None else latency,
            "orders_created": self.orders_created,
            "retrain_cycles": self.retrain_cycles,
        }


@dataclass
class RunResult:
    metrics: Metrics
    scenario: ScenarioConfig
    trace: dict
    service: CloudService
    agent: EdgeAgent
    warm_model: L.ModelSnapshot
    distribution: list[dict] = field(default_factory=list)
    state_dir: str = ""

    def close(self) -> None:
        self.agent.close()
        self.service.close()


def scenario_features(config: ScenarioConfig, values: Iterable[float]) -> list[tuple[float, ...]]:
    """Feature vectors of a raw value stream under the scenario's
    windowing, outside any agent (offline recomputation path)."""
    out = []
    samples = samples_from_values(values)
    for window in window_stream(samples, config.window_size, config.window_size):
        out.append(extract_features(window, config.band_edges).as_tuple())
    return out


def warm_start_model(
    config: ScenarioConfig,
    values,
    eps: float = L.DEFAULT_EPS,
    capacity: int = L.DEFAULT_CAPACITY,
    version: int = 1,
) -> L.ModelSnapshot:
    """Model built from the first warm_windows windows of the stream:
    they become the reference and the threshold is calibrated on their
    member scores with the scenario's warm margin factor."""
    n_warm = config.warm_windows
    feats = scenario_features(config, values[: n_warm * config.window_size])
    if len(feats) < n_warm:
        raise ValueError("stream too short for warm start")
    scorer = L.LofScorer(feats, config.k, eps)
    threshold = L.calibrate_threshold(
        scorer.member_scores(), q=0.99, factor=config.warm_factor)
    return L.ModelSnapshot(
        version=version,
        params=L.LofParams(k=config.k, eps=eps),
        reference=L.ReferenceSet(points=tuple(feats), capacity=capacity),
        threshold=threshold,
        admit_below=L.derive_admit_below(threshold),
    )


def make_inprocess_push(agent: EdgeAgent):
    """Model push for the in-process topology: still round-trips the
    frame through the codec, then applies synchronously."""

    def push(env: P.Envelope) -> dict:
        decoded = P.decode(P.encode(env))
        accepted, version = agent.apply_model_update(decoded.payload)
        return {"accepted": accepted, "model_version": version}

    return push


def run_scenario(
    scenario: ScenarioConfig,
    topology: str = "inproc",
    out_dir: str | None = None,
    retrain_seed: int = 1234,
    retrain_min_records: int = 200,
) -> RunResult:
    if topology not in ("inproc", "tcp"):
        raise ValueError(f"unknown topology {topology!r}")
    base = out_dir or tempfile.mkdtemp(prefix="edgewatch-sim-")
    clock = deterministic_clock()

    catalog = FaultCatalog.from_obj(catalog_for_scenario(scenario))
    cloud_config = CloudConfig(
        store_dir=f"{base}/cloud",
        retrain_seed=retrain_seed,
        retrain_min_records=retrain_min_records,
        k=scenario.k,
        eps=L.DEFAULT_EPS,
        capacity=L.DEFAULT_CAPACITY,
    )
    service = CloudService(cloud_config, catalog=catalog, clock_ms=clock)

    values, labels = generate_stream(scenario)
    warm = warm_start_model(scenario, values)
    edge_state = f"{base}/edge/state"
    os.makedirs(edge_state, exist_ok=True)
    warm_path = L.save_model(warm, edge_state)

    edge_config = EdgeConfig(
        edge_id=EDGE_ID,
        equipment_id=EQUIPMENT_ID,
        spool_dir=f"{base}/edge/spool",
        state_dir=edge_state,
        initial_model=warm_path,
        window_size=scenario.window_size,
        hop=scenario.window_size,
        band_edges=scenario.band_edges,
        rule_margin=scenario.rule_margin,
        k=scenario.k,
    )

    tcp_server = None
    if topology == "tcp":
        tcp_server = IngestServer(service, port=0)
        tcp_server.start_background()
        link = TcpLink("127.0.0.1", tcp_server.port)
        agent = EdgeAgent(edge_config, link, clock_ms=clock)
    else:
        link = InProcessLink(service)
        agent = EdgeAgent(edge_config, link, clock_ms=clock)
        service.register_edge(EDGE_ID, make_inprocess_push(agent))

    n = scenario.window_size
    trigger = scenario.trigger_window
    outcomes = []
    distribution: list[dict] = []
    retrain_cycles = 0
    try:
        outcomes.extend(agent.process_values(values[: trigger * n]))
        upload = agent.trigger_upload()
        if not upload.ok:
            logger.warning("batch upload incomplete: %s", upload.detail)
        try:
            snapshot = service.retrain(EDGE_ID)
            retrain_cycles = 1
            distribution = service.distribute(EDGE_ID)
            if topology == "tcp":
                _wait_for_update(agent, snapshot.version)
        except RetrainError as exc:
            logger.info("retrain skipped: %s", exc)
        outcomes.extend(agent.process_values(values[trigger * n:]))

        orders_created = 0
        _, total_alerts = service.list_alerts(limit=1)
        if total_alerts:
            prediction = service.predict(EQUIPMENT_ID)
            service.create_order(prediction["prediction_id"])
            orders_created = 1
    finally:
        agent.write_status()
        if tcp_server is not None:
            link.close()
            tcp_server.shutdown()
            tcp_server.server_close()

    metrics = compute_metrics(scenario, labels, outcomes, agent, link,
                              orders_created, retrain_cycles)
    trace = {
        "windows": [o.window_index for o in outcomes],
        "scores": [o.score for o in outcomes],
        "anomalies": [o.is_anomaly for o in outcomes],
        "model_versions": [o.model_version for o in outcomes],
        "labels": labels,
        "thresholds": {
            warm.version: warm.threshold,
            **({m.version: m.threshold for m in
                [service.latest_model(EDGE_ID)] if m is not None}),
        },
    }
    return RunResult(
        metrics=metrics, scenario=scenario, trace=trace, service=service,
        agent=agent, warm_model=warm, distribution=distribution,
        state_dir=base)


def _wait_for_update(agent: EdgeAgent, version: int, timeout: float = 5.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if agent.pending_updates() > 0 or agent.model.version >= version:
            return
        time.sleep(0.01)
    logger.warning("model update v%d not received within %.1fs", version, timeout)


def compute_metrics(
    scenario: ScenarioConfig,
    labels: list[bool],
    outcomes,
    agent: EdgeAgent,
    link,
    orders_created: int,
    retrain_cycles: int,
) -> Metrics:
    fault_windows = {w for w, lab in enumerate(labels) if lab}
    flagged = {o.window_index for o in outcomes if o.is_anomaly}
    tp = len(flagged & fault_windows)
    precision = tp / len(flagged) if flagged else 1.0
    recall = tp / len(fault_windows) if fault_windows else 1.0

    latencies: list[int | None] = []
    for f in scenario.faults:
        hits = [w for w in flagged if f.start_window <= w <= f.end_window + 2]
        latencies.append(min(hits) - f.start_window if hits else None)

    by_topic = link.bytes_by_topic
    bytes_speed = (by_topic.get(P.Topic.ANOMALY.value, 0)
                   + by_topic.get(P.Topic.RULE_PROPOSAL.value, 0))
    return Metrics(
        scenario=scenario.name,
        duration_windows=scenario.duration_windows,
        bytes_raw=agent.spool_bytes,
        bytes_speed=bytes_speed,
        bytes_batch=by_topic.get(P.Topic.RAW_BATCH.value, 0),
        anomalies_published=agent.anomalies_published,
        rules_published=agent.rules_published,
        precision=precision,
        recall=recall,
        detection_latency=tuple(latencies),
        orders_created=orders_created,
        retrain_cycles=retrain_cycles,
        final_model_version=agent.model.version,
    )
