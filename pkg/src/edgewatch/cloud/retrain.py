"""Batch-layer retraining: rebuild a reference set and threshold from the
full raw record history of an edge.

Procedure (deterministic given the seed):
  1. score every record by LOF against a capacity-sized seeded uniform
     sample of the records themselves;
  2. the normal pool is every record scoring at or below the 0.95
     score quantile; the new reference is a capacity-sized seeded
     uniform sample of that pool;
  3. threshold = calibrate_threshold(normal-pool scores, q=0.99, 1.2);
  4. version = previous + 1.
"""

from __future__ import annotations

import random
from typing import Sequence

from .. import lof as L


class RetrainError(RuntimeError):
    """Too few stored records to retrain."""


def retrain_model(
    features: Sequence[Sequence[float]],
    *,
    k: int,
    eps: float,
    capacity: int,
    seed: int,
    prev_version: int,
    min_records: int = 200,
    normal_quantile: float = 0.95,
    threshold_quantile: float = 0.99,
    threshold_factor: float = 1.2,
) -> L.ModelSnapshot:
    n = len(features)
    if n < min_records:
        raise RetrainError(f"retrain requires >= {min_records} records, have {n}")
    rng = random.Random(seed)

    sample_idx = sorted(rng.sample(range(n), min(capacity, n)))
    sample = [tuple(features[i]) for i in sample_idx]
    scorer = L.LofScorer(sample, k, eps)
    scores = [scorer.score(fv) for fv in features]

    cut = L.quantile(scores, normal_quantile)
    normal_idx = [i for i, s in enumerate(scores) if s <= cut]
    pool_scores = [scores[i] for i in normal_idx]
    ref_idx = sorted(rng.sample(normal_idx, min(capacity, len(normal_idx))))
    reference = tuple(tuple(features[i]) for i in ref_idx)

    threshold = L.calibrate_threshold(pool_scores, threshold_quantile, threshold_factor)
    return L.ModelSnapshot(
        version=prev_version + 1,
        params=L.LofParams(k=k, eps=eps),
        reference=L.ReferenceSet(points=reference, capacity=capacity),
        threshold=threshold,
        admit_below=L.derive_admit_below(threshold),
    )
