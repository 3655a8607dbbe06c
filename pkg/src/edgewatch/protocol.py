"""Line protocol between edges, the cloud, and the simulator.

Every message is one Envelope encoded as a single canonical-notation line
(see :mod:`edgewatch.canon`) over any reliable ordered byte stream.  The
codec is pure and stateless; both directions (edge publishes, cloud acks
and pushes model updates) use the same framing.

Topics and their payloads:

    ANOMALY       AnomalyEventPayload   edge -> cloud, one per suspect window
    RULE_PROPOSAL RuleProposalPayload   edge -> cloud, extracted detection rule
    RAW_BATCH     RawBatchChunkPayload  edge -> cloud, spooled raw windows
    MODEL_UPDATE  ModelUpdatePayload    cloud -> edge, retrained model push
    ACK           AckPayload            response to any of the above

decode() is total over arbitrary bytes: it either returns an Envelope or
raises a ProtocolError subclass, never anything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from . import canon


class ProtocolError(Exception):
    """Base class for every codec failure."""


class ParseError(ProtocolError):
    """Line is not well-formed canonical notation."""


class UnsupportedTopicError(ProtocolError):
    """Topic string is not one we speak."""


class ValidationError(ProtocolError):
    """Structurally valid line whose fields violate an invariant."""


class EncodeError(ProtocolError):
    """Envelope cannot be encoded (topic/payload mismatch or bad field)."""


class Topic(str, Enum):
    ANOMALY = "ANOMALY"
    RULE_PROPOSAL = "RULE_PROPOSAL"
    RAW_BATCH = "RAW_BATCH"
    MODEL_UPDATE = "MODEL_UPDATE"
    ACK = "ACK"


PROTOCOL_VERSION = 1


# -- field coercion helpers -------------------------------------------------

def _as_int(obj: Any, name: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ValidationError(f"{name} must be an integer, got {type(obj).__name__}")
    return obj


def _as_float(obj: Any, name: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValidationError(f"{name} must be a real number, got {type(obj).__name__}")
    return float(obj)


def _as_str(obj: Any, name: str) -> str:
    if not isinstance(obj, str):
        raise ValidationError(f"{name} must be a string, got {type(obj).__name__}")
    return obj


def _as_bool(obj: Any, name: str) -> bool:
    if not isinstance(obj, bool):
        raise ValidationError(f"{name} must be a boolean, got {type(obj).__name__}")
    return obj


def _as_vector(obj: Any, name: str) -> tuple[float, ...]:
    if not isinstance(obj, (list, tuple)):
        raise ValidationError(f"{name} must be an array")
    return tuple(_as_float(v, f"{name}[{i}]") for i, v in enumerate(obj))


def _require(obj: dict, key: str) -> Any:
    if key not in obj:
        raise ValidationError(f"missing field {key!r}")
    return obj[key]


# -- payloads ---------------------------------------------------------------

@dataclass(frozen=True)
class AnomalyEventPayload:
    """One anomalous window, forwarded on the speed layer."""

    equipment_id: str
    window_index: int
    score: float
    features: tuple[float, ...]
    threshold_at_detection: float
    model_version: int

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "threshold_at_detection", float(self.threshold_at_detection))

    def validate(self) -> None:
        if self.score < 0:
            raise ValidationError("score must be non-negative")
        if not self.features:
            raise ValidationError("features must be non-empty")
        if self.threshold_at_detection <= 0:
            raise ValidationError("threshold_at_detection must be positive")
        if self.window_index < 0:
            raise ValidationError("window_index must be non-negative")

    def to_obj(self) -> dict:
        return {
            "equipment_id": self.equipment_id,
            "window_index": self.window_index,
            "score": self.score,
            "features": list(self.features),
            "threshold_at_detection": self.threshold_at_detection,
            "model_version": self.model_version,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "AnomalyEventPayload":
        return cls(
            equipment_id=_as_str(_require(obj, "equipment_id"), "equipment_id"),
            window_index=_as_int(_require(obj, "window_index"), "window_index"),
            score=_as_float(_require(obj, "score"), "score"),
            features=_as_vector(_require(obj, "features"), "features"),
            threshold_at_detection=_as_float(
                _require(obj, "threshold_at_detection"), "threshold_at_detection"),
            model_version=_as_int(_require(obj, "model_version"), "model_version"),
        )


@dataclass(frozen=True)
class RuleProposalPayload:
    """Hyper-rectangle detection rule extracted at the edge."""

    rule_id: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    min_score: float
    support_count: int

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "min_score", float(self.min_score))

    def validate(self) -> None:
        if len(self.lower) != len(self.upper):
            raise ValidationError("lower and upper must have the same dimension")
        if not self.lower:
            raise ValidationError("rule bounds must be non-empty")
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if lo > hi:
                raise ValidationError(f"lower[{i}] > upper[{i}]")
        if self.support_count < 1:
            raise ValidationError("support_count must be >= 1")

    def to_obj(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "min_score": self.min_score,
            "support_count": self.support_count,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "RuleProposalPayload":
        return cls(
            rule_id=_as_str(_require(obj, "rule_id"), "rule_id"),
            lower=_as_vector(_require(obj, "lower"), "lower"),
            upper=_as_vector(_require(obj, "upper"), "upper"),
            min_score=_as_float(_require(obj, "min_score"), "min_score"),
            support_count=_as_int(_require(obj, "support_count"), "support_count"),
        )


@dataclass(frozen=True)
class RawBatchChunkPayload:
    """One chunk of a spool segment uploaded on the batch layer.

    records: (window_index, features, score) triples.
    """

    chunk_index: int
    total_chunks: int
    records: tuple[tuple[int, tuple[float, ...], float], ...]
    segment_id: str

    def __post_init__(self):
        normalized = tuple(
            (int(w), tuple(float(v) for v in fv), float(s))
            for w, fv, s in self.records
        )
        object.__setattr__(self, "records", normalized)

    def validate(self) -> None:
        if self.total_chunks < 1:
            raise ValidationError("total_chunks must be >= 1")
        if not 0 <= self.chunk_index < self.total_chunks:
            raise ValidationError("chunk_index must be in [0, total_chunks)")
        if not self.segment_id:
            raise ValidationError("segment_id must be non-empty")

    def to_obj(self) -> dict:
        return {
            "chunk_index": self.chunk_index,
            "total_chunks": self.total_chunks,
            "records": [[w, list(fv), s] for w, fv, s in self.records],
            "segment_id": self.segment_id,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "RawBatchChunkPayload":
        raw = _require(obj, "records")
        if not isinstance(raw, list):
            raise ValidationError("records must be an array")
        records = []
        for i, triple in enumerate(raw):
            if not isinstance(triple, (list, tuple)) or len(triple) != 3:
                raise ValidationError(f"records[{i}] must be a (window, features, score) triple")
            w, fv, s = triple
            records.append((
                _as_int(w, f"records[{i}].window_index"),
                _as_vector(fv, f"records[{i}].features"),
                _as_float(s, f"records[{i}].score"),
            ))
        return cls(
            chunk_index=_as_int(_require(obj, "chunk_index"), "chunk_index"),
            total_chunks=_as_int(_require(obj, "total_chunks"), "total_chunks"),
            records=tuple(records),
            segment_id=_as_str(_require(obj, "segment_id"), "segment_id"),
        )


@dataclass(frozen=True)
class ModelUpdatePayload:
    """Retrained model pushed from cloud to edge."""

    model_version: int
    k: int
    threshold: float
    reference_points: tuple[tuple[float, ...], ...]
    eps: float

    def __post_init__(self):
        object.__setattr__(
            self, "reference_points",
            tuple(tuple(float(v) for v in p) for p in self.reference_points))
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "eps", float(self.eps))

    def validate(self) -> None:
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.threshold <= 0:
            raise ValidationError("threshold must be positive")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if not self.reference_points:
            raise ValidationError("reference_points must be non-empty")
        dim = len(self.reference_points[0])
        if dim == 0:
            raise ValidationError("reference points must be non-empty vectors")
        for i, p in enumerate(self.reference_points):
            if len(p) != dim:
                raise ValidationError(f"reference_points[{i}] has dimension {len(p)}, expected {dim}")

    def to_obj(self) -> dict:
        return {
            "model_version": self.model_version,
            "k": self.k,
            "threshold": self.threshold,
            "reference_points": [list(p) for p in self.reference_points],
            "eps": self.eps,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ModelUpdatePayload":
        raw = _require(obj, "reference_points")
        if not isinstance(raw, list):
            raise ValidationError("reference_points must be an array")
        points = tuple(_as_vector(p, f"reference_points[{i}]") for i, p in enumerate(raw))
        return cls(
            model_version=_as_int(_require(obj, "model_version"), "model_version"),
            k=_as_int(_require(obj, "k"), "k"),
            threshold=_as_float(_require(obj, "threshold"), "threshold"),
            reference_points=points,
            eps=_as_float(_require(obj, "eps"), "eps"),
        )


@dataclass(frozen=True)
class AckPayload:
    """Acknowledgement of one received envelope.

    info carries side-channel detail, e.g. {"model_version": 4} on a
    MODEL_UPDATE ack or {"segment_id": ...} on a RAW_BATCH ack.
    """

    ack_topic: str
    ack_seq: int
    ok: bool
    info: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.ack_topic not in Topic._value2member_map_:
            raise ValidationError(f"unknown acked topic {self.ack_topic!r}")
        if self.ack_seq < 0:
            raise ValidationError("ack_seq must be non-negative")

    def to_obj(self) -> dict:
        return {
            "ack_topic": self.ack_topic,
            "ack_seq": self.ack_seq,
            "ok": self.ok,
            "info": dict(self.info),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "AckPayload":
        info = obj.get("info", {})
        if not isinstance(info, dict):
            raise ValidationError("info must be an object")
        return cls(
            ack_topic=_as_str(_require(obj, "ack_topic"), "ack_topic"),
            ack_seq=_as_int(_require(obj, "ack_seq"), "ack_seq"),
            ok=_as_bool(_require(obj, "ok"), "ok"),
            info=info,
        )


Payload = (
    AnomalyEventPayload | RuleProposalPayload | RawBatchChunkPayload
    | ModelUpdatePayload | AckPayload
)

PAYLOAD_TYPES: dict[Topic, type] = {
    Topic.ANOMALY: AnomalyEventPayload,
    Topic.RULE_PROPOSAL: RuleProposalPayload,
    Topic.RAW_BATCH: RawBatchChunkPayload,
    Topic.MODEL_UPDATE: ModelUpdatePayload,
    Topic.ACK: AckPayload,
}


# -- envelope ---------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    topic: Topic
    edge_id: str
    seq: int
    timestamp_ms: int
    payload: Payload
    version: int = PROTOCOL_VERSION

    def validate(self) -> None:
        expected = PAYLOAD_TYPES[self.topic]
        if type(self.payload) is not expected:
            raise ValidationError(
                f"topic {self.topic.value} requires {expected.__name__}, "
                f"got {type(self.payload).__name__}")
        if not self.edge_id:
            raise ValidationError("edge_id must be non-empty")
        if self.seq < 0:
            raise ValidationError("seq must be non-negative")
        if self.version < 1:
            raise ValidationError("version must be >= 1")
        self.payload.validate()


def encode(envelope: Envelope) -> bytes:
    """Encode to exactly one newline-terminated UTF-8 line."""
    try:
        envelope.validate()
        obj = {
            "edge_id": envelope.edge_id,
            "payload": envelope.payload.to_obj(),
            "seq": envelope.seq,
            "timestamp_ms": envelope.timestamp_ms,
            "topic": envelope.topic.value,
            "version": envelope.version,
        }
        return canon.dump_line(obj)
    except ProtocolError as exc:
        raise EncodeError(str(exc)) from exc
    except canon.CanonError as exc:
        raise EncodeError(str(exc)) from exc


def decode(line: bytes | str) -> Envelope:
    """Decode one line; total over arbitrary bytes (raises ProtocolError)."""
    if isinstance(line, str):
        line = line.encode("utf-8", errors="surrogateescape")
    line = line.rstrip(b"\r\n")
    if not line.strip():
        raise ParseError("empty line")
    try:
        obj = canon.loads(line)
    except canon.CanonError as exc:
        raise ParseError(str(exc)) from exc
    if not isinstance(obj, dict):
        raise ParseError("message must be an object")

    topic_str = _as_str(_require(obj, "topic"), "topic")
    try:
        topic = Topic(topic_str)
    except ValueError:
        raise UnsupportedTopicError(f"unknown topic {topic_str!r}") from None

    payload_obj = _require(obj, "payload")
    if not isinstance(payload_obj, dict):
        raise ValidationError("payload must be an object")
    payload = PAYLOAD_TYPES[topic].from_obj(payload_obj)

    envelope = Envelope(
        topic=topic,
        edge_id=_as_str(_require(obj, "edge_id"), "edge_id"),
        seq=_as_int(_require(obj, "seq"), "seq"),
        timestamp_ms=_as_int(_require(obj, "timestamp_ms"), "timestamp_ms"),
        payload=payload,
        version=_as_int(_require(obj, "version"), "version"),
    )
    envelope.validate()
    return envelope


class FrameBuffer:
    """Reassembles newline-delimited frames from an arbitrarily segmented
    byte stream.  Feed it whatever recv() returned; it yields complete
    lines (terminator stripped) regardless of how TCP chopped them.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        lines = []
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                break
            lines.append(bytes(self._buf[:idx]))
            del self._buf[:idx + 1]
        return lines

    def pending(self) -> int:
        return len(self._buf)


class SeqCounter:
    """Per-topic monotonically increasing sequence numbers for one sender."""

    def __init__(self) -> None:
        self._next: dict[Topic, int] = {}

    def next(self, topic: Topic) -> int:
        seq = self._next.get(topic, 1)
        self._next[topic] = seq + 1
        return seq
