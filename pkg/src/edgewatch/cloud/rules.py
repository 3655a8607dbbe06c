"""CEP rule set: hyper-rectangle predicates evaluated on every incoming
anomaly event, grown by merging edge-proposed rules.

Merge semantics: identical rule ids deduplicate (support accumulates);
edge-proposed boxes overlapping an existing edge-proposed box with
Jaccard >= the merge threshold widen it to the bounding box of both,
cascading until no pair overlaps that much.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from math import prod
from typing import Sequence

from .stores import LogStore

logger = logging.getLogger(__name__)

JACCARD_MERGE_DEFAULT = 0.8


class RuleSource(str, Enum):
    EDGE_PROPOSED = "EDGE_PROPOSED"
    CLOUD_AUTHORED = "CLOUD_AUTHORED"


@dataclass(frozen=True)
class CepRule:
    rule_id: str
    source: RuleSource
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    min_score: float
    support_count: int = 1
    enabled: bool = True
    equipment_id: str | None = None

    def matches(self, features: Sequence[float], score: float, equipment_id: str) -> bool:
        if not self.enabled or len(features) != len(self.lower):
            return False
        if self.equipment_id is not None and self.equipment_id != equipment_id:
            return False
        if score < self.min_score:
            return False
        return all(lo <= f <= hi for lo, f, hi in zip(self.lower, features, self.upper))

    def to_obj(self, absorbed: bool = False) -> dict:
        return {
            "rule_id": self.rule_id,
            "source": self.source.value,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "min_score": self.min_score,
            "support_count": self.support_count,
            "enabled": self.enabled,
            "equipment_id": self.equipment_id,
            "absorbed": absorbed,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CepRule":
        return cls(
            rule_id=obj["rule_id"],
            source=RuleSource(obj["source"]),
            lower=tuple(float(v) for v in obj["lower"]),
            upper=tuple(float(v) for v in obj["upper"]),
            min_score=float(obj["min_score"]),
            support_count=int(obj["support_count"]),
            enabled=bool(obj.get("enabled", True)),
            equipment_id=obj.get("equipment_id"),
        )


def box_jaccard(a_lower, a_upper, b_lower, b_upper) -> float:
    """Intersection volume over union volume of two boxes.

    Degenerate (zero-volume) boxes compare 1.0 only when identical.
    """
    if len(a_lower) != len(b_lower):
        return 0.0
    inter = prod(
        max(0.0, min(au, bu) - max(al, bl))
        for al, au, bl, bu in zip(a_lower, a_upper, b_lower, b_upper))
    vol_a = prod(au - al for al, au in zip(a_lower, a_upper))
    vol_b = prod(bu - bl for bl, bu in zip(b_lower, b_upper))
    union = vol_a + vol_b - inter
    if union <= 0.0:
        same = tuple(a_lower) == tuple(b_lower) and tuple(a_upper) == tuple(b_upper)
        return 1.0 if same else 0.0
    return inter / union


class RuleSet:
    def __init__(self, store: LogStore, merge_threshold: float = JACCARD_MERGE_DEFAULT):
        self._store = store
        self._merge_threshold = merge_threshold
        self._active: dict[str, CepRule] = {}
        for obj in store.all():
            if obj.get("absorbed"):
                self._active.pop(obj["rule_id"], None)
            else:
                self._active[obj["rule_id"]] = CepRule.from_obj(obj)

    def rules(self) -> list[CepRule]:
        return list(self._active.values())

    def get(self, rule_id: str) -> CepRule | None:
        return self._active.get(rule_id)

    def evaluate(self, features, score: float, equipment_id: str) -> list[str]:
        """Ids of every enabled rule the event falls inside."""
        return [r.rule_id for r in self._active.values()
                if r.matches(features, score, equipment_id)]

    def add(self, rule: CepRule) -> None:
        if rule.rule_id in self._active:
            raise ValueError(f"rule id {rule.rule_id} already present")
        self._persist(rule)

    def _persist(self, rule: CepRule) -> None:
        self._store.append(rule.to_obj())
        self._active[rule.rule_id] = rule

    def _absorb(self, rule_id: str) -> None:
        rule = self._active.pop(rule_id)
        self._store.append(rule.to_obj(absorbed=True))

    def merge_proposal(self, payload, equipment_id: str | None = None) -> dict:
        """Fold one edge proposal into the set; see module docstring."""
        existing = self._active.get(payload.rule_id)
        if existing is not None:
            self._persist(replace(
                existing, support_count=existing.support_count + payload.support_count))
            return {"outcome": "deduplicated", "rule_id": payload.rule_id}

        current = CepRule(
            rule_id=payload.rule_id,
            source=RuleSource.EDGE_PROPOSED,
            lower=payload.lower,
            upper=payload.upper,
            min_score=payload.min_score,
            support_count=payload.support_count,
            equipment_id=equipment_id,
        )
        outcome = "inserted"
        while True:
            partner = next(
                (r for r in self._active.values()
                 if r.source is RuleSource.EDGE_PROPOSED
                 and r.rule_id != current.rule_id
                 and box_jaccard(r.lower, r.upper, current.lower, current.upper)
                 >= self._merge_threshold),
                None)
            if partner is None:
                break
            outcome = "merged"
            if current.rule_id in self._active:
                self._absorb(current.rule_id)
            current = CepRule(
                rule_id=partner.rule_id,
                source=RuleSource.EDGE_PROPOSED,
                lower=tuple(min(a, b) for a, b in zip(partner.lower, current.lower)),
                upper=tuple(max(a, b) for a, b in zip(partner.upper, current.upper)),
                min_score=min(partner.min_score, current.min_score),
                support_count=partner.support_count + current.support_count,
                equipment_id=partner.equipment_id if partner.equipment_id == current.equipment_id else None,
            )
        self._persist(current)
        return {"outcome": outcome, "rule_id": current.rule_id}
