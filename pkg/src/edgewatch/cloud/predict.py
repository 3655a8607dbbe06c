"""Failure prediction: nearest-signature classification against the fault
catalog plus linear extrapolation of the anomaly score trend.

The catalog maps feature-space signatures to (cause, part, action); the
predicted cause is the entry nearest the latest anomalous feature vector
and the time-to-critical is a least-squares fit of score vs window index
extrapolated to twice the detection threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .. import canon

ETA_IMMINENT = "imminent"
ETA_UNBOUNDED = "unbounded"

ACTIONS = ("INSPECT", "REPLACE")


class NoDataError(LookupError):
    """No alert-bearing events for the equipment."""


@dataclass(frozen=True)
class CatalogEntry:
    cause: str
    part: str
    action: str
    signature: tuple[float, ...]

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}")
        object.__setattr__(self, "signature", tuple(float(v) for v in self.signature))


class FaultCatalog:
    def __init__(self, entries: Sequence[CatalogEntry]):
        if not entries:
            raise ValueError("fault catalog must be non-empty")
        causes = [e.cause for e in entries]
        if len(set(causes)) != len(causes):
            raise ValueError("catalog causes must be unique")
        self.entries = list(entries)

    @classmethod
    def from_obj(cls, obj) -> "FaultCatalog":
        return cls([
            CatalogEntry(
                cause=e["cause"], part=e["part"], action=e["action"],
                signature=tuple(float(v) for v in e["signature"]))
            for e in obj
        ])

    @classmethod
    def from_file(cls, path: str) -> "FaultCatalog":
        with open(path, "rb") as fh:
            return cls.from_obj(canon.loads(fh.read()))

    def to_obj(self) -> list[dict]:
        return [
            {"cause": e.cause, "part": e.part, "action": e.action,
             "signature": list(e.signature)}
            for e in self.entries
        ]

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(canon.dump_line(self.to_obj()))

    def by_cause(self, cause: str) -> CatalogEntry:
        for entry in self.entries:
            if entry.cause == cause:
                return entry
        raise KeyError(cause)

    def classify(self, features: Sequence[float]) -> tuple[CatalogEntry, float]:
        """Nearest entry by Euclidean distance; ties broken by catalog
        order.  Confidence contrasts the nearest with the runner-up:
        1 / (1 + d_nearest/d_second); a single-entry catalog scores 1.
        """
        dists = [math.dist(e.signature, features) for e in self.entries]
        best_i = min(range(len(dists)), key=lambda i: (dists[i], i))
        if len(dists) == 1:
            return self.entries[best_i], 1.0
        d1 = dists[best_i]
        d2 = min(d for i, d in enumerate(dists) if i != best_i)
        ratio = d1 / d2 if d2 > 0 else 1.0
        return self.entries[best_i], 1.0 / (1.0 + ratio)


def fit_eta(points: Sequence[tuple[int, float]], critical: float,
            fit_window: int = 20) -> float | str:
    """Windows until the score trend reaches critical.

    Least-squares slope over the last fit_window (window_index, score)
    points, extrapolated from the latest score.  A score already at or
    past critical is "imminent"; a flat, negative, or undefined trend is
    "unbounded".
    """
    latest_w, latest_s = points[-1]
    if latest_s >= critical:
        return ETA_IMMINENT
    tail = list(points[-fit_window:])
    if len(tail) < 2:
        return ETA_UNBOUNDED
    n = len(tail)
    mean_w = sum(w for w, _ in tail) / n
    mean_s = sum(s for _, s in tail) / n
    var_w = sum((w - mean_w) ** 2 for w, _ in tail)
    if var_w == 0:
        return ETA_UNBOUNDED
    slope = sum((w - mean_w) * (s - mean_s) for w, s in tail) / var_w
    if not math.isfinite(slope) or slope <= 0:
        return ETA_UNBOUNDED
    return (critical - latest_s) / slope


def predict_failure(
    catalog: FaultCatalog,
    events: Sequence[dict],
    critical_multiplier: float = 2.0,
    fit_window: int = 20,
) -> dict:
    """Prediction from an equipment's anomalous event history.

    events are stored event records (oldest first) carrying window_index,
    score, threshold_at_detection, and features.
    """
    if not events:
        raise NoDataError("no anomalous events for equipment")
    latest = events[-1]
    entry, confidence = catalog.classify(latest["features"])
    critical = critical_multiplier * float(latest["threshold_at_detection"])
    eta = fit_eta(
        [(int(e["window_index"]), float(e["score"])) for e in events],
        critical, fit_window=fit_window)
    return {
        "equipment_id": latest["equipment_id"],
        "cause": entry.cause,
        "part": entry.part,
        "action": entry.action,
        "confidence": confidence,
        "eta_windows": eta,
        "score_critical": critical,
        "latest_score": float(latest["score"]),
        "latest_window": int(latest["window_index"]),
    }
