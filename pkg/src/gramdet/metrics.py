"""Detection-quality metrics over in-distribution and OOD deviation scores.

Orientation is fixed package-wide: higher deviation means more
out-of-distribution. ID examples are the positives; OOD examples the
negatives. All three metrics are invariant under strictly increasing
transformations of the pooled scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class EvalResult:
    """The three standard detection metrics as fractions in [0, 1]."""

    tnr_at_95tpr: float
    auroc: float
    detection_accuracy: float
    id_count: int
    ood_count: int


EVAL_HEADER = "id_count,ood_count,tnr_at_95tpr,auroc,dtacc"


def _as_scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DataError(f"{name} score set is empty")
    return arr


def nearest_rank(values, fraction: float) -> float:
    """Nearest-rank order statistic: value at 1-based sorted index ceil(fraction*n).

    The tiny slack guards against floating-point overshoot when
    fraction * n is an exact integer.
    """
    arr = np.sort(_as_scores(values, "percentile input"))
    n = arr.size
    k = math.ceil(fraction * n - 1e-9)
    k = min(max(k, 1), n)
    return float(arr[k - 1])


def tnr_at_95tpr(id_scores, ood_scores, target_tpr: float = 0.95) -> float:
    """Fraction of OOD scores strictly above the nearest-rank ID percentile."""
    ids = _as_scores(id_scores, "in-distribution")
    oods = _as_scores(ood_scores, "out-of-distribution")
    tau = nearest_rank(ids, target_tpr)
    return float(np.mean(oods > tau))


def _average_ranks(pooled: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    _, inverse, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def auroc(id_scores, ood_scores) -> float:
    """Probability an OOD example scores a higher deviation than an ID example.

    Rank-based computation equivalent to the Mann-Whitney U statistic;
    ID/OOD ties count one half.
    """
    ids = _as_scores(id_scores, "in-distribution")
    oods = _as_scores(ood_scores, "out-of-distribution")
    n, m = ids.size, oods.size
    ranks = _average_ranks(np.concatenate([ids, oods]))
    u = ranks[n:].sum() - m * (m + 1) / 2.0
    return float(u / (n * m))


def detection_accuracy(id_scores, ood_scores) -> float:
    """Best balanced accuracy over all thresholds (ID below or at, OOD above).

    The objective is piecewise constant in tau, so evaluating the midpoints
    between adjacent distinct pooled scores plus the two infinities attains
    the exact maximum.
    """
    ids = np.sort(_as_scores(id_scores, "in-distribution"))
    oods = np.sort(_as_scores(ood_scores, "out-of-distribution"))
    distinct = np.unique(np.concatenate([ids, oods]))
    candidates = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]])
    p_id = np.searchsorted(ids, candidates, side="right") / ids.size
    p_ood = 1.0 - np.searchsorted(oods, candidates, side="right") / oods.size
    return float(np.max(0.5 * p_id + 0.5 * p_ood))


def evaluate(id_scores, ood_scores) -> EvalResult:
    ids = _as_scores(id_scores, "in-distribution")
    oods = _as_scores(ood_scores, "out-of-distribution")
    return EvalResult(
        tnr_at_95tpr=tnr_at_95tpr(ids, oods),
        auroc=auroc(ids, oods),
        detection_accuracy=detection_accuracy(ids, oods),
        id_count=int(ids.size),
        ood_count=int(oods.size),
    )


def format_eval_row(result: EvalResult) -> str:
    """CSV row with metric values as percentages to two decimals."""
    return (
        f"{result.id_count},{result.ood_count},"
        f"{100.0 * result.tnr_at_95tpr:.2f},{100.0 * result.auroc:.2f},"
        f"{100.0 * result.detection_accuracy:.2f}"
    )
