"""Higher-order Gram matrices and their reductions to statistic vectors.

A feature map is an ``(n_channels, n_pixels)`` array; fully-connected
layers use one pixel per channel. The order-p Gram matrix raises the map
element-wise to the p-th power, multiplies by its own transpose and takes
the element-wise p-th root, so every order lives on the same scale as the
plain Gram matrix (order 1).

Four reductions of the symmetric result are supported. The row-sum
variants are the O(n)-per-order statistics used by the production scoring
path; the flattened upper triangle is the exact O(n^2) reference kept for
equivalence checks.

All accumulation happens in float64 regardless of input storage precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import DataError, GramOverflowError, ShapeMismatchError

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(1, 11))


class StatVariant(Enum):
    """Reduction of a symmetric Gram matrix to a feature vector."""

    DIAGONAL = "diag"
    OFF_DIAGONAL_ROW_SUMS = "offdiag"
    FULL_ROW_SUMS = "rowsum"
    FULL_UPPER_TRIANGULAR = "full"

    def feature_length(self, num_channels: int) -> int:
        """Length of the statistic vector for a layer with this many channels."""
        if self is StatVariant.FULL_UPPER_TRIANGULAR:
            return num_channels * (num_channels + 1) // 2
        return num_channels


@dataclass(frozen=True)
class GramStat:
    """Statistic vector extracted from one layer at one order."""

    layer_index: int
    order: int
    variant: StatVariant
    values: np.ndarray


def normalize_orders(orders: Iterable[int]) -> tuple[int, ...]:
    """Deduplicate and sort Gram orders ascending, validating positivity."""
    out = sorted({int(p) for p in orders})
    if out and out[0] < 1:
        raise ValueError(f"orders must be positive integers, got {out}")
    return tuple(out)


def validate_feature_map(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(
            f"feature map must be 2-D with at least one channel and pixel, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise DataError("feature map contains non-finite values")
    return arr


def powered_grams(feature_map, orders: tuple[int, ...], *, layer_index: int | None = None) -> np.ndarray:
    """Stack of order-p Gram matrices, shape ``(len(orders), n, n)``.

    Each slice is the element-wise signed p-th root of ``(F**p) @ (F**p).T``.
    Odd orders use ``sign(x) * |x|**(1/p)`` so negative activations stay
    meaningful; for even orders the product is non-negative and the real
    root applies (the signed form reduces to it). The raw product is
    mirrored from its upper triangle before the root, so every slice is
    symmetric by construction.
    """
    arr = validate_feature_map(feature_map)
    n = arr.shape[0]
    if not orders:
        return np.empty((0, n, n), dtype=np.float64)
    if min(orders) < 1:
        raise ValueError(f"orders must be positive integers, got {orders}")
    if arr.shape[1] == 1:
        return _single_pixel_grams(arr[:, 0], orders, layer_index)
    # scalar exponents per order keep every slice bit-identical no matter
    # which order set it is computed inside (numpy's pow fast paths depend
    # on whether the exponent operand is a broadcast scalar)
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.stack([arr ** float(p) for p in orders])
        raw = powered @ powered.transpose(0, 2, 1)
    il, jl = np.tril_indices(n, -1)
    raw[:, il, jl] = raw[:, jl, il]
    if not np.isfinite(raw).all():
        finite = np.isfinite(raw).reshape(len(orders), -1).all(axis=1)
        bad = int(np.asarray(orders)[~finite][0])
        raise GramOverflowError(bad, layer_index)
    grams = np.empty_like(raw)
    for k, p in enumerate(orders):
        if p == 1:
            grams[k] = raw[k]
        else:
            grams[k] = np.sign(raw[k]) * np.abs(raw[k]) ** (1.0 / float(p))
    return grams


def _single_pixel_grams(channel_values: np.ndarray, orders: tuple[int, ...], layer_index) -> np.ndarray:
    """One-pixel feature maps collapse analytically: the power and the root
    cancel, leaving a_i * a_j for odd orders and |a_i * a_j| for even ones.
    Exact, and avoids the O(P * n^2) pow calls for fully-connected layers."""
    with np.errstate(over="ignore", invalid="ignore"):
        outer = np.multiply.outer(channel_values, channel_values)
    if not np.isfinite(outer).all():
        raise GramOverflowError(min(orders), layer_index)
    absolute = np.abs(outer)
    grams = np.empty((len(orders), outer.shape[0], outer.shape[0]), dtype=np.float64)
    for k, p in enumerate(orders):
        grams[k] = outer if p % 2 else absolute
    return grams


def gram_matrix(feature_map, order: int, *, layer_index: int | None = None) -> np.ndarray:
    """Order-p Gram matrix of a feature map (symmetric, float64)."""
    p = int(order)
    if p < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    return powered_grams(feature_map, (p,), layer_index=layer_index)[0]


def reduce_grams(grams: np.ndarray, variant: StatVariant) -> np.ndarray:
    """Reduce a ``(P, n, n)`` Gram stack to ``(P, feature_length)`` statistics.

    Row sums are assembled as off-diagonal sums plus the diagonal so that
    FULL_ROW_SUMS == DIAGONAL + OFF_DIAGONAL_ROW_SUMS holds exactly.
    """
    n = grams.shape[-1]
    diag = np.diagonal(grams, axis1=1, axis2=2)
    if variant is StatVariant.DIAGONAL:
        return diag.copy()
    if variant is StatVariant.FULL_UPPER_TRIANGULAR:
        iu = np.triu_indices(n)
        return grams[:, iu[0], iu[1]]
    off = grams.copy()
    idx = np.arange(n)
    off[:, idx, idx] = 0.0
    offsums = off.sum(axis=2)
    if variant is StatVariant.OFF_DIAGONAL_ROW_SUMS:
        return offsums
    return offsums + diag


def extract_stat(gram, variant: StatVariant, layer_index: int, order: int) -> GramStat:
    """Extract one statistic vector from a symmetric Gram matrix."""
    g = np.asarray(gram, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {g.shape}")
    values = reduce_grams(g[None, :, :], variant)[0]
    return GramStat(layer_index=layer_index, order=int(order), variant=variant, values=values)


def stat_matrix(feature_map, orders: tuple[int, ...], variant: StatVariant, *, layer_index: int | None = None) -> np.ndarray:
    """Statistics for every order at once, shape ``(len(orders), feature_length)``."""
    return reduce_grams(powered_grams(feature_map, orders, layer_index=layer_index), variant)


def compute_all_stats(feature_map, orders: Iterable[int], variant: StatVariant, *, layer_index: int = 0) -> list[GramStat]:
    """One GramStat per order, ascending by order."""
    ordered = normalize_orders(orders)
    sm = stat_matrix(feature_map, ordered, variant, layer_index=layer_index)
    return [
        GramStat(layer_index=layer_index, order=p, variant=variant, values=sm[k])
        for k, p in enumerate(ordered)
    ]
