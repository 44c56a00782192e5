"""Deviation scoring of activation records against fitted tables.

The min/max metric measures the percentage excursion of each statistic
outside its class-conditional [min, max] interval (zero inside, boundary
inclusive). The gaussian metric measures the squared standardized distance
from the class-conditional mean. Per-feature deviations are summed within
each (layer, order) cell; layer deviations sum over orders; the total sums
over layers, optionally normalizing each layer by its expected deviation
on a validation split. The same normalizer applies to every record
irrespective of its predicted class.

All denominators (|min|, |max|, variance, expected layer deviation) share
one clamp, EPSILON, so scores stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyClassError, EmptyStreamError, ShapeMismatchError
from .gram import GramStat, powered_grams, reduce_grams
from .tables import MomentsTable, Table

EPSILON = 1e-12


class Aggregation(Enum):
    """How layer deviations combine into the total deviation."""

    NORMALIZED = "norm"
    UNNORMALIZED = "unnorm"


@dataclass(frozen=True)
class NormalizerVector:
    """Per-layer expected deviations measured on a validation split."""

    expected: np.ndarray
    clamped: np.ndarray
    epsilon: float = EPSILON


@dataclass(frozen=True)
class ScoredExample:
    predicted_class: int
    layer_deviations: np.ndarray
    total_deviation: float


@dataclass(frozen=True)
class Threshold:
    tau: float
    target_tpr: float
    calibration_size: int


def deviation_scalar(lower: float, upper: float, value: float) -> float:
    """Percentage excursion of one value outside a closed [lower, upper] interval."""
    if math.isinf(lower) or math.isinf(upper):
        raise EmptyClassError("bounds are empty-class sentinels; class was never fitted")
    if lower > upper:
        raise ValueError(f"invalid bounds: lower {lower} > upper {upper}")
    if value < lower:
        return (lower - value) / max(abs(lower), EPSILON)
    if value > upper:
        return (value - upper) / max(abs(upper), EPSILON)
    return 0.0


def deviation_gaussian(mean: float, variance: float, value: float) -> float:
    """Squared standardized distance, variance clamped below at EPSILON."""
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    return (value - mean) ** 2 / max(variance, EPSILON)


def _minmax_cells(mins: np.ndarray, maxs: np.ndarray, values: np.ndarray) -> np.ndarray:
    below = np.maximum(mins - values, 0.0) / np.maximum(np.abs(mins), EPSILON)
    above = np.maximum(values - maxs, 0.0) / np.maximum(np.abs(maxs), EPSILON)
    return below + above


def _gaussian_cells(means: np.ndarray, variances: np.ndarray, values: np.ndarray) -> np.ndarray:
    diff = values - means
    return diff * diff / np.maximum(variances, EPSILON)


def deviation_matrix(record, table: Table) -> np.ndarray:
    """Per-(layer, order) deviation sums for one record, shape ``(L, |P|)``.

    Raises EmptyClassError when the record's predicted class received no
    records during fitting.
    """
    spec = table.spec
    c = int(record.predicted_class)
    if not 0 <= c < spec.num_classes:
        raise DataError(f"predicted class {c} out of range [0, {spec.num_classes})")
    if table.counts[c] == 0:
        raise EmptyClassError(f"class {c} has no fitted records; cannot score against it")
    if len(record.layers) != spec.num_layers:
        raise ShapeMismatchError(
            f"record has {len(record.layers)} layers, table expects {spec.num_layers}"
        )
    out = np.empty((spec.num_layers, spec.num_orders), dtype=np.float64)
    gaussian = isinstance(table, MomentsTable)
    if gaussian:
        variances = table.variances
    for l, fm in enumerate(record.layers):
        stats = reduce_grams(powered_grams(fm, spec.orders, layer_index=l), spec.variant)
        if stats.shape[1] != spec.feature_lengths[l]:
            raise ShapeMismatchError(
                f"layer {l} yields {stats.shape[1]} features, table expects {spec.feature_lengths[l]}"
            )
        if gaussian:
            cells = _gaussian_cells(table.means[l][c], variances[l][c], stats)
        else:
            cells = _minmax_cells(table.mins[l][c], table.maxs[l][c], stats)
        out[l] = cells.sum(axis=1)
    return out


def layer_deviation(stats: Sequence[GramStat], table: Table, predicted_class: int, layer_index: int) -> float:
    """Deviation of one layer: per-feature deviations summed over all orders."""
    spec = table.spec
    c = int(predicted_class)
    if table.counts[c] == 0:
        raise EmptyClassError(f"class {c} has no fitted records; cannot score against it")
    total = 0.0
    for stat in stats:
        if stat.variant is not spec.variant:
            raise ShapeMismatchError(f"stat variant {stat.variant} does not match table {spec.variant}")
        try:
            k = spec.orders.index(stat.order)
        except ValueError:
            raise ShapeMismatchError(f"order {stat.order} not present in table orders {spec.orders}")
        values = np.asarray(stat.values, dtype=np.float64)
        if isinstance(table, MomentsTable):
            cells = _gaussian_cells(
                table.means[layer_index][c, k], table.variances[layer_index][c, k], values
            )
        else:
            cells = _minmax_cells(
                table.mins[layer_index][c, k], table.maxs[layer_index][c, k], values
            )
        total += float(cells.sum())
    return total


def score_stream(records: Iterable, table: Table) -> tuple[np.ndarray, np.ndarray]:
    """Deviation decomposition for a record stream.

    Returns ``(classes, devs)`` where ``classes`` has shape ``(N,)`` and
    ``devs`` has shape ``(N, L, |P|)``; ``devs[i, l, k]`` is record i's
    deviation sum at layer l restricted to order ``spec.orders[k]``.
    """
    classes: list[int] = []
    rows: list[np.ndarray] = []
    for record in records:
        classes.append(int(record.predicted_class))
        rows.append(deviation_matrix(record, table))
    if not rows:
        raise EmptyStreamError("no records to score")
    return np.asarray(classes, dtype=np.int64), np.stack(rows)


def layer_deviations_from_matrix(devs: np.ndarray, order_mask: np.ndarray | None = None) -> np.ndarray:
    """Collapse a ``(..., L, |P|)`` decomposition to layer deviations ``(..., L)``."""
    if order_mask is None:
        return devs.sum(axis=-1)
    return devs[..., order_mask].sum(axis=-1)


def normalizer_from_layer_deviations(layer_devs: np.ndarray) -> NormalizerVector:
    """Expected per-layer deviation over a validation split (rows = records).

    Layers whose mean deviation falls below EPSILON are clamped to EPSILON
    and flagged.
    """
    arr = np.atleast_2d(np.asarray(layer_devs, dtype=np.float64))
    if arr.shape[0] == 0:
        raise EmptyStreamError("validation split is empty; cannot compute normalizer")
    raw = arr.mean(axis=0)
    clamped = raw < EPSILON
    return NormalizerVector(expected=np.maximum(raw, EPSILON), clamped=clamped)


def compute_normalizer(validation_records: Iterable, table: Table) -> NormalizerVector:
    """Normalizer from a validation record stream; class-independent by design."""
    _, devs = score_stream(validation_records, table)
    return normalizer_from_layer_deviations(layer_deviations_from_matrix(devs))


def total_deviation(layer_devs, normalizer: NormalizerVector | None, mode: Aggregation) -> float:
    """Combine layer deviations; normalized mode divides each layer by its expected deviation."""
    arr = np.asarray(layer_devs, dtype=np.float64)
    if mode is Aggregation.UNNORMALIZED:
        return float(arr.sum())
    if normalizer is None:
        raise ValueError("normalized aggregation requires a normalizer")
    if arr.shape[-1] != normalizer.expected.shape[0]:
        raise ShapeMismatchError("layer deviation length does not match normalizer length")
    return float((arr / normalizer.expected).sum())


def total_deviations(layer_devs: np.ndarray, normalizer: NormalizerVector | None, mode: Aggregation) -> np.ndarray:
    """Vectorized totals for a ``(N, L)`` matrix of layer deviations."""
    arr = np.asarray(layer_devs, dtype=np.float64)
    if mode is Aggregation.UNNORMALIZED:
        return arr.sum(axis=-1)
    if normalizer is None:
        raise ValueError("normalized aggregation requires a normalizer")
    return (arr / normalizer.expected).sum(axis=-1)


def score_examples(classes: np.ndarray, devs: np.ndarray, normalizer: NormalizerVector | None, mode: Aggregation) -> list[ScoredExample]:
    layer = layer_deviations_from_matrix(devs)
    totals = total_deviations(layer, normalizer, mode)
    return [
        ScoredExample(predicted_class=int(c), layer_deviations=layer[i], total_deviation=float(totals[i]))
        for i, c in enumerate(classes)
    ]


def calibrate_threshold(deviations, target_tpr: float = 0.95) -> Threshold:
    """Nearest-rank percentile threshold over in-distribution deviations.

    Requires at least 20 calibration values; the threshold is the value at
    1-based sorted index ceil(target_tpr * N).
    """
    from .metrics import nearest_rank

    arr = np.asarray(deviations, dtype=np.float64)
    if arr.size < 20:
        raise DataError(f"need at least 20 calibration deviations, got {arr.size}")
    if not 0.0 < target_tpr < 1.0:
        raise ValueError(f"target_tpr must be in (0, 1), got {target_tpr}")
    tau = nearest_rank(arr, target_tpr)
    return Threshold(tau=tau, target_tpr=target_tpr, calibration_size=int(arr.size))


def is_ood(total: float, threshold: Threshold) -> bool:
    """Flag out-of-distribution iff the total deviation strictly exceeds tau."""
    return total > threshold.tau
