"""Codec tests: round-trips, framing, validation, fuzz totality."""

import random

import pytest

from edgewatch import protocol as P

from oracles import random_envelope


def _ack(seq=1):
    return P.Envelope(
        topic=P.Topic.ACK, edge_id="e1", seq=seq, timestamp_ms=1700000000000,
        payload=P.AckPayload(ack_topic="ANOMALY", ack_seq=seq, ok=True))


def test_ack_round_trip_identity():
    env = _ack()
    line = P.encode(env)
    assert P.decode(line) == env


def test_encode_is_single_line():
    env = P.Envelope(
        topic=P.Topic.ANOMALY, edge_id="line\nbreak", seq=7, timestamp_ms=5,
        payload=P.AnomalyEventPayload(
            equipment_id="装置\n9", window_index=1, score=2.5,
            features=[1.0, 2.0], threshold_at_detection=1.5, model_version=1))
    line = P.encode(env)
    assert line.endswith(b"\n")
    assert line.count(b"\x0a") == 1
    assert P.decode(line) == env


def test_topic_payload_mismatch_is_encode_error():
    env = P.Envelope(
        topic=P.Topic.ANOMALY, edge_id="e1", seq=1, timestamp_ms=0,
        payload=P.ModelUpdatePayload(
            model_version=1, k=1, threshold=1.5, reference_points=[[0.0]], eps=1e-9))
    with pytest.raises(P.EncodeError):
        P.encode(env)


def test_round_trip_randomized_envelopes():
    rng = random.Random(20240817)
    for _ in range(1000):
        env = random_envelope(rng)
        assert P.decode(P.encode(env)) == env


def test_decode_empty_line():
    with pytest.raises(P.ParseError):
        P.decode(b"")
    with pytest.raises(P.ParseError):
        P.decode(b"   \n")


def test_decode_unknown_topic():
    line = P.encode(_ack()).replace(b'"ACK"', b'"GOSSIP"')
    with pytest.raises(P.UnsupportedTopicError):
        P.decode(line)


def test_decode_invariant_violation():
    obj = (b'{"edge_id":"e1","payload":{"lower":[2.0],"min_score":1.0,"rule_id":"r",'
           b'"support_count":1,"upper":[1.0]},"seq":1,"timestamp_ms":0,'
           b'"topic":"RULE_PROPOSAL","version":1}')
    with pytest.raises(P.ValidationError):
        P.decode(obj)


def test_decode_ignores_unknown_fields():
    env = _ack(seq=9)
    line = P.encode(env).rstrip(b"\n")
    patched = line[:-1] + b',"future_field":{"x":1}}'
    assert P.decode(patched) == env


def test_decode_rejects_nonfinite():
    line = P.encode(_ack()).replace(b'"ack_seq":1', b'"ack_seq":1,"x":NaN')
    with pytest.raises(P.ProtocolError):
        P.decode(line)


def test_frame_buffer_reassembles_arbitrary_segmentation():
    rng = random.Random(99)
    envs = [random_envelope(rng) for _ in range(50)]
    stream = b"".join(P.encode(e) for e in envs)
    for trial in range(20):
        buf = P.FrameBuffer()
        got = []
        i = 0
        while i < len(stream):
            step = rng.randint(1, 37)
            for raw in buf.feed(stream[i:i + step]):
                got.append(P.decode(raw))
            i += step
        assert got == envs
        assert buf.pending() == 0


def test_decode_never_crashes_on_arbitrary_bytes():
    rng = random.Random(4242)
    cases = [
        b"", b"\n", b"\x00\xff\xfe", b"{", b"[]", b"null", b"123",
        b'{"topic":"ANOMALY"}', b'{"topic":1,"payload":{}}',
        "日本語そのまま".encode("utf-8"), b'"just a string"',
    ]
    for _ in range(2000):
        kind = rng.random()
        if kind < 0.4:
            case = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 80)))
        elif kind < 0.8:
            line = bytearray(P.encode(random_envelope(rng)))
            for _ in range(rng.randint(1, 6)):
                pos = rng.randrange(len(line))
                line[pos] = rng.getrandbits(8)
            case = bytes(line)
        else:
            line = P.encode(random_envelope(rng))
            case = line[:rng.randrange(len(line))]
        cases.append(case)
    for case in cases:
        try:
            P.decode(case)
        except P.ProtocolError:
            pass


def test_seq_counter_is_per_topic_monotone():
    counter = P.SeqCounter()
    assert [counter.next(P.Topic.ANOMALY) for _ in range(3)] == [1, 2, 3]
    assert counter.next(P.Topic.RAW_BATCH) == 1
    assert counter.next(P.Topic.ANOMALY) == 4
