"""Exact Local Outlier Factor scoring over a capacity-bounded reference set.

Definitions (Euclidean metric throughout):

    k-distance(o)     distance from o to its k-th nearest other point
    N_k(o)            all points within k-distance(o), ties included
    reach-dist(p, o)  max(k-distance(o), d(p, o))
    lrd(p)            |N_k(p)| / sum of reach-dist(p, o) over o in N_k(p)
    LOF(p)            (sum of lrd(o) over o in N_k(p)) / (|N_k(p)| * lrd(p))

Every distance and reach-distance is clamped below by eps, which makes
the score total on duplicate points (a set of identical points scores
exactly 1.0).  Scoring a point that is value-equal to a reference member
excludes that one occurrence, so members are scored against the rest of
the set.

Reference sets are small (capacity defaults to 512), so neighbor search
is an exact full scan; a LofScorer precomputes the members' k-distances
and local reachability densities once per immutable snapshot.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import canon

DEFAULT_K = 5
DEFAULT_EPS = 1e-9
DEFAULT_CAPACITY = 512
RULE_STREAK = 3
HASH_DECIMALS = 6


class InsufficientDataError(ValueError):
    """Reference set too small for the requested neighborhood."""


class ModelError(ValueError):
    """Feature vector incompatible with the model."""


class CalibrationError(ValueError):
    """Not enough scores to calibrate a threshold."""


@dataclass(frozen=True)
class LofParams:
    k: int = DEFAULT_K
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class ReferenceSet:
    """Ordered reference points with FIFO eviction at capacity."""

    points: tuple[tuple[float, ...], ...]
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if self.capacity < 2:
            raise ValueError("capacity must be >= 2")
        if len(pts) > self.capacity:
            raise ValueError(f"{len(pts)} points exceed capacity {self.capacity}")
        if pts:
            dim = len(pts[0])
            if any(len(p) != dim for p in pts):
                raise ValueError("all reference points must share one dimension")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return len(self.points[0]) if self.points else 0

    def appended(self, point: Sequence[float]) -> "ReferenceSet":
        """New set with point appended; evicts the oldest when full."""
        pts = self.points + (tuple(float(v) for v in point),)
        if len(pts) > self.capacity:
            pts = pts[len(pts) - self.capacity:]
        return ReferenceSet(points=pts, capacity=self.capacity)


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, ReferenceSet):
        points = points.points
    mat = np.asarray(points, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("points must be a 2-D collection")
    return mat


def _clamped_distances(points: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    diff = points - q
    return np.maximum(np.sqrt((diff * diff).sum(axis=1)), eps)


def _self_match_index(points: np.ndarray, q: np.ndarray) -> int | None:
    """Index of the first reference point exactly equal to q, if any."""
    hits = np.nonzero((points == q).all(axis=1))[0]
    return int(hits[0]) if hits.size else None


def k_distance(p: Sequence[float], points, k: int, eps: float = DEFAULT_EPS) -> float:
    """Distance from p to its k-th nearest other point (eps-clamped)."""
    mat = _as_matrix(points)
    q = np.asarray(p, dtype=np.float64)
    d = _clamped_distances(mat, q, eps)
    self_idx = _self_match_index(mat, q)
    if self_idx is not None:
        d = np.delete(d, self_idx)
    if d.size < k:
        raise InsufficientDataError(f"need {k} other points, have {d.size}")
    return float(np.partition(d, k - 1)[k - 1])


def knn(p: Sequence[float], points, k: int, eps: float = DEFAULT_EPS) -> list[int]:
    """Indices of all points within k-distance(p), ties included, ascending."""
    mat = _as_matrix(points)
    q = np.asarray(p, dtype=np.float64)
    d = _clamped_distances(mat, q, eps)
    self_idx = _self_match_index(mat, q)
    if self_idx is not None:
        d[self_idx] = np.inf
    if (mat.shape[0] - (1 if self_idx is not None else 0)) < k:
        raise InsufficientDataError(
            f"need {k} other points, have {mat.shape[0] - (1 if self_idx is not None else 0)}")
    kdist = np.partition(d, k - 1)[k - 1]
    return [int(i) for i in np.nonzero(d <= kdist)[0]]


class LofScorer:
    """Scoring structure over one immutable reference set.

    Precomputes each member's k-distance and lrd against the rest of the
    set, after which any query scores in one O(n) distance pass.
    """

    def __init__(self, points, k: int, eps: float = DEFAULT_EPS):
        self._points = _as_matrix(points)
        n = self._points.shape[0]
        if n < k + 1:
            raise InsufficientDataError(f"LOF with k={k} needs at least {k + 1} points, have {n}")
        self._k = k
        self._eps = eps

        diff = self._points[:, None, :] - self._points[None, :, :]
        dmat = np.maximum(np.sqrt((diff * diff).sum(axis=-1)), eps)
        np.fill_diagonal(dmat, np.inf)

        kdist = np.partition(dmat, k - 1, axis=1)[:, k - 1]
        reach = np.maximum(kdist[None, :], dmat)  # reach[i, j] = reach-dist(p_i, p_j)
        neighbor = dmat <= kdist[:, None]

        lrd = np.empty(n)
        for i in range(n):
            mask = neighbor[i]
            lrd[i] = mask.sum() / reach[i][mask].sum()

        self._dmat = dmat
        self._kdist = kdist
        self._neighbor = neighbor
        self._lrd = lrd

    @property
    def size(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    def score(self, p: Sequence[float]) -> float:
        """LOF of p against the reference set (self-excluded if a member)."""
        q = np.asarray(p, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ModelError(f"feature dimension {q.shape} does not match model ({self.dim})")
        d = _clamped_distances(self._points, q, self._eps)
        self_idx = _self_match_index(self._points, q)
        if self_idx is not None:
            d[self_idx] = np.inf
        kdist_q = np.partition(d, self._k - 1)[self._k - 1]
        mask = d <= kdist_q
        count = int(mask.sum())
        lrd_q = count / np.maximum(self._kdist[mask], d[mask]).sum()
        return float(self._lrd[mask].sum() / (count * lrd_q))

    def score_member(self, i: int) -> float:
        """LOF of reference member i against the rest of the set."""
        mask = self._neighbor[i]
        count = int(mask.sum())
        return float(self._lrd[mask].sum() / (count * self._lrd[i]))

    def member_scores(self) -> list[float]:
        return [self.score_member(i) for i in range(self.size)]


def lof(p: Sequence[float], points, k: int, eps: float = DEFAULT_EPS) -> float:
    """One-shot LOF of p; see LofScorer for repeated queries."""
    return LofScorer(points, k, eps).score(p)


# -- model snapshot ----------------------------------------------------------

def derive_admit_below(threshold: float) -> float:
    """Default admission bound: halfway between the inlier score 1 and
    the anomaly threshold."""
    return 1.0 + 0.5 * (threshold - 1.0)


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable, versioned bundle of reference points, parameters, and
    threshold; the object exchanged between the batch layer and edges."""

    version: int
    params: LofParams
    reference: ReferenceSet
    threshold: float
    admit_below: float

    def __post_init__(self):
        if self.threshold < 1.0:
            raise ValueError("threshold must be >= 1")
        if self.admit_below > self.threshold:
            raise ValueError("admit_below must not exceed threshold")
        object.__setattr__(self, "_scorer_cache", None)

    def scorer(self) -> LofScorer:
        cached = getattr(self, "_scorer_cache")
        if cached is None:
            cached = LofScorer(self.reference, self.params.k, self.params.eps)
            object.__setattr__(self, "_scorer_cache", cached)
        return cached

    def with_admitted(self, fv: Sequence[float]) -> "ModelSnapshot":
        return ModelSnapshot(
            version=self.version,
            params=self.params,
            reference=self.reference.appended(fv),
            threshold=self.threshold,
            admit_below=self.admit_below,
        )


@dataclass(frozen=True)
class ScoreResult:
    score: float
    is_anomaly: bool


def score_window(model: ModelSnapshot, fv: Sequence[float]) -> ScoreResult:
    """Score one feature vector; anomalous iff score strictly exceeds the
    threshold (a score exactly at threshold is normal)."""
    if len(tuple(fv)) != model.reference.dim:
        raise ModelError(
            f"feature dimension {len(tuple(fv))} does not match model ({model.reference.dim})")
    if len(model.reference) <= model.params.k:
        raise InsufficientDataError("reference must hold more than k points")
    score = model.scorer().score(fv)
    return ScoreResult(score=score, is_anomaly=score > model.threshold)


def maybe_admit(model: ModelSnapshot, fv: Sequence[float], score: float) -> ModelSnapshot:
    """Admit fv into the reference iff its score is safely normal
    (strictly below admit_below); anomalous or borderline points never
    enter the model."""
    if score < model.admit_below:
        return model.with_admitted(fv)
    return model


def quantile(values: Sequence[float], q: float) -> float:
    """Empirical quantile by linear interpolation of the order statistics."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("quantile of empty sequence")
    pos = q * (len(vals) - 1)
    lo = int(pos)
    frac = pos - lo
    return vals[lo] if frac == 0 else vals[lo] + frac * (vals[lo + 1] - vals[lo])


def calibrate_threshold(scores: Sequence[float], q: float, factor: float) -> float:
    """max(1, factor * empirical q-quantile), quantile by linear
    interpolation of the order statistics; needs at least 20 scores."""
    vals = [float(s) for s in scores]
    if len(vals) < 20:
        raise CalibrationError(f"need at least 20 scores, have {len(vals)}")
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    if factor < 1.0:
        raise ValueError("factor must be >= 1")
    return max(1.0, factor * quantile(vals, q))


# -- detection rules ---------------------------------------------------------

@dataclass(frozen=True)
class DetectionRule:
    """Hyper-rectangle over feature space covering a run of anomalies."""

    rule_id: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    min_score: float
    support_count: int


def rule_content_id(lower: Sequence[float], upper: Sequence[float], min_score: float) -> str:
    """Content hash of the rule bounds, stable across processes and runs."""
    obj = {
        "lower": [round(float(v), HASH_DECIMALS) for v in lower],
        "min_score": round(float(min_score), HASH_DECIMALS),
        "upper": [round(float(v), HASH_DECIMALS) for v in upper],
    }
    return hashlib.sha256(canon.dumps(obj).encode("utf-8")).hexdigest()[:16]


def extract_rule(
    anomalous_fvs: Sequence[Sequence[float]],
    scores: Sequence[float],
    margin: float = 0.0,
    min_support: int = RULE_STREAK,
    eps: float = DEFAULT_EPS,
) -> DetectionRule | None:
    """Bounding box (with margin) of a run of consecutive anomalies.

    Returns None below min_support.  Per component the box is
    [min - margin*range, max + margin*range]; a degenerate range is
    widened as if it were eps.
    """
    if len(anomalous_fvs) < min_support:
        return None
    if margin < 0:
        raise ValueError("margin must be >= 0")
    mat = np.asarray(anomalous_fvs, dtype=np.float64)
    mn = mat.min(axis=0)
    mx = mat.max(axis=0)
    rng = np.where(mx - mn > 0, mx - mn, eps)
    lower = tuple(float(v) for v in mn - margin * rng)
    upper = tuple(float(v) for v in mx + margin * rng)
    min_score = float(min(scores))
    return DetectionRule(
        rule_id=rule_content_id(lower, upper, min_score),
        lower=lower,
        upper=upper,
        min_score=min_score,
        support_count=len(anomalous_fvs),
    )


# -- persistence -------------------------------------------------------------

def model_to_obj(model: ModelSnapshot) -> dict:
    """Model file content: the wire update fields plus admit_below."""
    return {
        "admit_below": model.admit_below,
        "eps": model.params.eps,
        "k": model.params.k,
        "model_version": model.version,
        "reference_points": [list(p) for p in model.reference.points],
        "threshold": model.threshold,
    }


def model_from_obj(obj: dict, capacity: int = DEFAULT_CAPACITY) -> ModelSnapshot:
    points = tuple(tuple(float(v) for v in p) for p in obj["reference_points"])
    threshold = float(obj["threshold"])
    admit_below = float(obj.get("admit_below", derive_admit_below(threshold)))
    return ModelSnapshot(
        version=int(obj["model_version"]),
        params=LofParams(k=int(obj["k"]), eps=float(obj["eps"])),
        reference=ReferenceSet(points=points, capacity=max(capacity, len(points))),
        threshold=threshold,
        admit_below=admit_below,
    )


def save_model(model: ModelSnapshot, directory) -> str:
    """Write one model-v<version> file in canonical notation; returns path."""
    import os
    path = os.path.join(str(directory), f"model-v{model.version}")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(canon.dump_line(model_to_obj(model)))
    os.replace(tmp, path)
    return path


def load_model(path, capacity: int = DEFAULT_CAPACITY) -> ModelSnapshot:
    with open(path, "rb") as fh:
        return model_from_obj(canon.loads(fh.read()), capacity=capacity)
