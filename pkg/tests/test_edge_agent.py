"""Edge agent tests: filter semantics, streak rules, spool and upload,
model updates, crash recovery, offline replay equivalence."""

import os

import pytest

from edgewatch import canon
from edgewatch import lof as L
from edgewatch import protocol as P
from edgewatch.edge.config import ENV_CLOUD_ADDR, EdgeConfig
from edgewatch.edge.links import LinkError
from edgewatch.edge.spool import Spool

from simsetup import EDGE_ID, Rig, mini_fault, mini_scenario


def anomaly_events(service):
    return [e for e in service.event_records()]


# -- filter semantics -----------------------------------------------------------

def test_normal_windows_publish_nothing(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=100))
    outcomes = rig.agent.process_values(rig.values)
    assert len(outcomes) == 100
    assert anomaly_events(rig.service) == []
    _, spooled = rig.agent.spool.record_counts()
    assert spooled == 100


def test_single_fault_window_publishes_one_event(tmp_path):
    scn = mini_scenario(duration=100, faults=[mini_fault(60, 61)])
    rig = Rig(tmp_path, scn)
    outcomes = rig.agent.process_values(rig.values)
    events = anomaly_events(rig.service)
    assert len(events) == 1
    assert events[0]["window_index"] == 60
    assert [o.window_index for o in outcomes if o.is_anomaly] == [60]


def test_three_streak_publishes_one_rule(tmp_path):
    scn = mini_scenario(duration=100, faults=[mini_fault(60, 63)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.values)
    assert len(anomaly_events(rig.service)) == 3
    rules = rig.service.rules.rules()
    assert len(rules) == 1
    assert rules[0].support_count == 3


def test_long_streak_still_one_rule(tmp_path):
    scn = mini_scenario(duration=100, faults=[mini_fault(60, 66)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.values)
    assert rig.agent.rules_published == 1


def test_broken_streak_no_rule(tmp_path):
    scn = mini_scenario(duration=100,
                        faults=[mini_fault(60, 62), mini_fault(70, 72)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.values)
    assert rig.agent.anomalies_published == 4
    assert rig.agent.rules_published == 0


def test_warmup_windows_never_flagged(tmp_path):
    # fault from the very first window: warmup must spool+admit, not flag
    scn = mini_scenario(duration=30, faults=[mini_fault(0, 3)])
    rig = Rig(tmp_path, scn)
    outcomes = rig.agent.process_values(rig.values)
    k = rig.edge_config.k
    assert all(not o.is_anomaly for o in outcomes[:k + 1])
    assert all(o.warmup for o in outcomes[:k + 1])
    assert not any(o.warmup for o in outcomes[k + 1:])


def test_filter_conservation(tmp_path):
    scn = mini_scenario(duration=120, faults=[mini_fault(60, 64)])
    rig = Rig(tmp_path, scn)
    outcomes = rig.agent.process_values(rig.values)
    # every window spooled exactly once
    rig.agent.spool.close_active()
    spooled = [w for seg in rig.agent.spool.closed_segments() for (w, _, _) in seg.records]
    assert spooled == [o.window_index for o in outcomes]
    # events are exactly the flagged windows
    flagged = [o.window_index for o in outcomes if o.is_anomaly]
    assert [e["window_index"] for e in anomaly_events(rig.service)] == flagged
    assert rig.agent.anomalies_published == len(flagged)


# -- upload ----------------------------------------------------------------------

def test_upload_chunking_and_deletion(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=30))
    for w in range(1200):
        rig.agent.spool.append(w, (1.0, 2.0, 3.0, 0.5), 1.0)
    result = rig.agent.trigger_upload()
    assert result.ok
    assert result.segments_sent == 1
    assert result.chunks_sent == 3  # 500/500/200
    assert result.records_sent == 1200
    assert rig.agent.spool.closed_segments() == []
    assert rig.service.raw.count_for_edge(EDGE_ID) == 1200


def test_upload_nothing_is_noop(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=30))
    result = rig.agent.trigger_upload()
    assert result.ok and result.segments_sent == 0


def test_upload_resend_deduplicates(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=30))
    for w in range(40):
        rig.agent.spool.append(w, (1.0, 2.0, 3.0, 0.5), 1.0)
    rig.agent.spool.close_active()
    segment = rig.agent.spool.closed_segments()[0]
    payload = P.RawBatchChunkPayload(
        chunk_index=0, total_chunks=1, records=segment.records,
        segment_id=segment.segment_id)
    first = rig.service.ingest_raw_chunk(EDGE_ID, payload)
    again = rig.service.ingest_raw_chunk(EDGE_ID, payload)
    assert first == {"segment_id": segment.segment_id, "complete": True, "duplicate": False}
    assert again["duplicate"] is True
    assert rig.service.raw.count_for_edge(EDGE_ID) == 40


class FlakyLink:
    """Wraps a link; fails the first `fail_first` RAW_BATCH sends."""

    def __init__(self, inner, fail_first: int):
        self._inner = inner
        self._remaining = fail_first
        self.bytes_by_topic = inner.bytes_by_topic

    def send(self, env):
        if env.topic is P.Topic.RAW_BATCH and self._remaining > 0:
            self._remaining -= 1
            raise LinkError("injected failure")
        return self._inner.send(env)

    def send_oneway(self, env):
        return self._inner.send_oneway(env)

    def close(self):
        self._inner.close()


def test_upload_partial_failure_retries_only_unacked(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=30))
    for w in range(600):
        rig.agent.spool.append(w, (1.0, 2.0, 3.0, 0.5), 1.0)
    rig.agent._link = FlakyLink(rig.link, fail_first=2)
    result = rig.agent.trigger_upload()
    assert not result.ok and result.segments_pending == 1
    assert rig.agent.spool.closed_segments() != []

    rig.agent._link = rig.link
    result = rig.agent.trigger_upload()
    assert result.ok and result.segments_sent == 1
    assert rig.service.raw.count_for_edge(EDGE_ID) == 600


def test_periodic_upload_trigger(tmp_path):
    scn = mini_scenario(duration=100)
    rig = Rig(tmp_path, scn, upload_every=25)
    rig.agent.process_values(rig.values)
    assert rig.service.raw.count_for_edge(EDGE_ID) == 100


# -- retry queue -------------------------------------------------------------------

class DownLink:
    def __init__(self):
        self.bytes_by_topic = {}
        self.down = True
        self.delivered = []

    def send(self, env):
        if self.down:
            raise LinkError("cloud down")
        self.delivered.append(env)
        return P.Envelope(
            topic=P.Topic.ACK, edge_id=env.edge_id, seq=1, timestamp_ms=0,
            payload=P.AckPayload(ack_topic=env.topic.value, ack_seq=env.seq, ok=True))

    def send_oneway(self, env):
        pass

    def close(self):
        pass


def test_events_buffered_while_cloud_down(tmp_path):
    scn = mini_scenario(duration=80, faults=[mini_fault(60, 64)])
    rig = Rig(tmp_path, scn, register=False)
    down = DownLink()
    rig.agent._link = down
    rig.agent.process_values(rig.window_values(0, 70))
    assert rig.agent.retry_queue_depth > 0
    down.down = False
    rig.agent.process_values(rig.window_values(70, 80))
    assert rig.agent.retry_queue_depth == 0
    seqs = [e.seq for e in down.delivered if e.topic is P.Topic.ANOMALY]
    assert seqs == sorted(seqs) and len(seqs) == 4


# -- model updates -----------------------------------------------------------------

def _update_payload(model: L.ModelSnapshot, version: int) -> P.ModelUpdatePayload:
    return P.ModelUpdatePayload(
        model_version=version, k=model.params.k, threshold=model.threshold,
        reference_points=model.reference.points, eps=model.params.eps)


def test_model_update_version_rules(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=40))
    assert rig.agent.model.version == 1
    accepted, version = rig.agent.apply_model_update(_update_payload(rig.warm, 4))
    assert accepted and version == 4
    accepted, version = rig.agent.apply_model_update(_update_payload(rig.warm, 3))
    assert not accepted and version == 4
    # persisted for restart
    assert os.path.exists(os.path.join(rig.edge_config.state_dir, "model-v4"))


def test_model_update_malformed_rejected(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=40))
    wrong_dim = P.ModelUpdatePayload(
        model_version=9, k=2, threshold=1.5,
        reference_points=[[1.0, 2.0]] * 8, eps=1e-9)
    assert rig.agent.apply_model_update(wrong_dim) == (False, 1)
    too_few = P.ModelUpdatePayload(
        model_version=9, k=6, threshold=1.5,
        reference_points=[[1.0, 2.0, 3.0, 0.5]] * 6, eps=1e-9)
    assert rig.agent.apply_model_update(too_few) == (False, 1)


def test_subsequent_events_carry_new_version(tmp_path):
    scn = mini_scenario(duration=100, faults=[mini_fault(80, 81)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.window_values(0, 60))
    env = P.Envelope(
        topic=P.Topic.MODEL_UPDATE, edge_id=EDGE_ID, seq=1, timestamp_ms=0,
        payload=_update_payload(rig.warm, 2))
    rig.agent.enqueue_model_update(env)
    rig.agent.process_values(rig.window_values(60, 100))
    events = anomaly_events(rig.service)
    assert len(events) == 1
    assert events[0]["model_version"] == 2


def test_startup_prefers_newest_persisted_model(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=40))
    rig.agent.apply_model_update(_update_payload(rig.warm, 7))
    agent = rig.restart_agent()
    assert agent.model.version == 7


# -- replay equivalence ---------------------------------------------------------------

def test_spooled_scores_match_offline_recomputation(tmp_path):
    scn = mini_scenario(duration=90, faults=[mini_fault(50, 54)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.values)
    rig.agent.spool.close_active()
    records = [r for seg in rig.agent.spool.closed_segments() for r in seg.records]
    assert len(records) == 90

    model = rig.warm
    k = rig.edge_config.k
    for i, (w, fv, spooled_score) in enumerate(records):
        if i < k + 1:
            expected = L.score_window(model, fv).score
            assert spooled_score == expected
            model = model.with_admitted(fv)
        else:
            result = L.score_window(model, fv)
            assert spooled_score == result.score, f"window {w}"
            model = L.maybe_admit(model, fv, result.score)


# -- crash safety -----------------------------------------------------------------------

def test_crash_recovery_no_duplicates_no_loss(tmp_path):
    scn = mini_scenario(duration=100)
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.window_values(0, 47))
    rig.agent.abandon()  # crash: no close_active, no status flush

    # torn final line: the in-flight window was half-written
    spool_dir = rig.edge_config.spool_dir
    open_files = [f for f in os.listdir(spool_dir) if f.endswith(".open")]
    with open(os.path.join(spool_dir, open_files[0]), "ab") as fh:
        fh.write(b'{"features":[1.0,2.0')

    agent = rig.restart_agent()
    agent.process_values(rig.window_values(47, 100))
    result = agent.trigger_upload()
    assert result.ok
    stored = sorted(w for w, _, _ in rig.service.raw.records_for_edge(EDGE_ID))
    assert stored == list(range(100))  # torn line was a duplicate-to-be, not a loss


def test_spool_truncates_torn_line_on_recovery(tmp_path):
    spool = Spool(str(tmp_path / "sp"), "e1", roll_every=1000)
    spool.append(0, (1.0,), 1.0)
    spool.append(1, (2.0,), 1.0)
    spool.close()
    files = os.listdir(tmp_path / "sp")
    path = os.path.join(tmp_path / "sp", files[0])
    with open(path, "ab") as fh:
        fh.write(b'{"features":[3.0],"sco')
    recovered = Spool(str(tmp_path / "sp"), "e1", roll_every=1000)
    assert recovered.last_window_index() == 1
    recovered.append(2, (3.0,), 1.0)
    recovered.close_active()
    records = [r for seg in recovered.closed_segments() for r in seg.records]
    assert [w for w, _, _ in records] == [0, 1, 2]


# -- bandwidth invariant ------------------------------------------------------------------

def test_anomaly_bytes_below_raw_bytes(tmp_path):
    scn = mini_scenario(duration=120, faults=[mini_fault(60, 66)])
    rig = Rig(tmp_path, scn)
    rig.agent.process_values(rig.values)
    rig.agent.trigger_upload()
    by_topic = rig.link.bytes_by_topic
    assert by_topic[P.Topic.ANOMALY.value] <= by_topic[P.Topic.RAW_BATCH.value]


# -- config ---------------------------------------------------------------------------------

def test_config_round_trip_and_env_override(tmp_path, monkeypatch):
    config = EdgeConfig(
        edge_id="e9", equipment_id="fan-9",
        spool_dir=str(tmp_path / "sp"), state_dir=str(tmp_path / "st"),
        cloud_addr="10.0.0.1:7700")
    path = tmp_path / "edge.conf"
    config.save(str(path))
    loaded = EdgeConfig.from_file(str(path))
    assert loaded.cloud_addr == "10.0.0.1:7700"
    assert loaded.band_edges == config.band_edges
    monkeypatch.setenv(ENV_CLOUD_ADDR, "10.9.9.9:7000")
    overridden = EdgeConfig.from_file(str(path))
    assert overridden.cloud_addr == "10.9.9.9:7000"
    assert overridden.cloud_host_port() == ("10.9.9.9", 7000)


def test_status_file(tmp_path):
    rig = Rig(tmp_path, mini_scenario(duration=60))
    rig.agent.process_values(rig.values)
    rig.agent.write_status()
    with open(os.path.join(rig.edge_config.state_dir, "status"), "rb") as fh:
        status = canon.loads(fh.read())
    assert status["windows_processed"] == 60
    assert status["model_version"] == 1
    assert status["spool_records"] == 60
