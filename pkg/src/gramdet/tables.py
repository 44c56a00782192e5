"""Class-conditional statistic tables: min/max bounds and mean/variance moments.

Tables are logically indexed ``(class, layer, order, feature)``. Storage is
ragged across layers (each layer keeps its own feature length) and dense
within a layer: one ``(num_classes, num_orders, feature_length)`` array per
layer. Fitting conditions every update on the record's *predicted* class;
misclassified training records therefore widen the wrong class's cells by
design. Tables merge associatively, so a record stream may be partitioned,
fitted independently and combined.

Binary table format ("GBND", little-endian, no padding):

    magic "GBND" | version u16 | metric u8 (0=min/max, 1=mean/var)
    | stat variant u8 (0=diag, 1=offdiag, 2=rowsum, 3=full)
    | num_classes u32 | num_layers u32 | num_orders u32
    | order values u32 each | per-layer feature lengths u64 each
    | first value array as f64 in (class, layer, order, feature) nesting
    | second value array likewise | per-class counts u64 each

The first/second arrays are mins/maxs for metric 0 and means/variances for
metric 1.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import (
    EmptyStreamError,
    DataError,
    FormatError,
    ShapeMismatchError,
    TruncatedError,
    VersionError,
)
from .gram import StatVariant, normalize_orders, powered_grams, reduce_grams

GBND_MAGIC = b"GBND"
GBND_VERSION = 1

METRIC_MINMAX = 0
METRIC_MEANVAR = 1

_VARIANT_CODES = {
    StatVariant.DIAGONAL: 0,
    StatVariant.OFF_DIAGONAL_ROW_SUMS: 1,
    StatVariant.FULL_ROW_SUMS: 2,
    StatVariant.FULL_UPPER_TRIANGULAR: 3,
}
_CODE_VARIANTS = {v: k for k, v in _VARIANT_CODES.items()}


@dataclass(frozen=True)
class TableSpec:
    """Shape contract of a fitted table."""

    num_classes: int
    orders: tuple[int, ...]
    feature_lengths: tuple[int, ...]
    variant: StatVariant

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if any(n < 1 for n in self.feature_lengths):
            raise ValueError("feature lengths must be positive")

    @property
    def num_layers(self) -> int:
        return len(self.feature_lengths)

    @property
    def num_orders(self) -> int:
        return len(self.orders)

    @property
    def total_features(self) -> int:
        return self.num_orders * sum(self.feature_lengths)

    def _empty_cells(self, fill: float) -> list[np.ndarray]:
        return [
            np.full((self.num_classes, self.num_orders, n), fill, dtype=np.float64)
            for n in self.feature_lengths
        ]


@dataclass
class BoundsTable:
    """Per-cell minima and maxima of training statistics (Mins/Maxs)."""

    spec: TableSpec
    mins: list[np.ndarray]
    maxs: list[np.ndarray]
    counts: np.ndarray

    @classmethod
    def empty(cls, spec: TableSpec) -> "BoundsTable":
        # +inf/-inf sentinels: cells of classes that never receive a record
        return cls(
            spec=spec,
            mins=spec._empty_cells(np.inf),
            maxs=spec._empty_cells(-np.inf),
            counts=np.zeros(spec.num_classes, dtype=np.int64),
        )

    def update(self, predicted_class: int, layer_stats: list[np.ndarray]) -> None:
        for l, sm in enumerate(layer_stats):
            np.minimum(self.mins[l][predicted_class], sm, out=self.mins[l][predicted_class])
            np.maximum(self.maxs[l][predicted_class], sm, out=self.maxs[l][predicted_class])
        self.counts[predicted_class] += 1

    def value_arrays(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return self.mins, self.maxs


@dataclass
class MomentsTable:
    """Per-cell means and population variances of training statistics."""

    spec: TableSpec
    means: list[np.ndarray]
    m2: list[np.ndarray]
    counts: np.ndarray

    @classmethod
    def empty(cls, spec: TableSpec) -> "MomentsTable":
        return cls(
            spec=spec,
            means=spec._empty_cells(0.0),
            m2=spec._empty_cells(0.0),
            counts=np.zeros(spec.num_classes, dtype=np.int64),
        )

    def update(self, predicted_class: int, layer_stats: list[np.ndarray]) -> None:
        c = predicted_class
        self.counts[c] += 1
        n = self.counts[c]
        for l, sm in enumerate(layer_stats):
            delta = sm - self.means[l][c]
            self.means[l][c] += delta / n
            self.m2[l][c] += delta * (sm - self.means[l][c])

    @property
    def variances(self) -> list[np.ndarray]:
        """Population variances (divide by N); zero for unseen classes."""
        out = []
        denom = np.maximum(self.counts, 1).astype(np.float64)[:, None, None]
        for l in range(self.spec.num_layers):
            out.append(self.m2[l] / denom)
        return out

    def value_arrays(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return self.means, self.variances


Table = Union[BoundsTable, MomentsTable]


def _iter_layer_stats(record, spec: TableSpec, expected_channels: list[int]) -> list[np.ndarray]:
    if len(record.layers) != spec.num_layers:
        raise ShapeMismatchError(
            f"record has {len(record.layers)} layers, table expects {spec.num_layers}"
        )
    stats = []
    for l, fm in enumerate(record.layers):
        arr = np.asarray(fm, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != expected_channels[l]:
            raise ShapeMismatchError(
                f"layer {l} has shape {arr.shape}, expected {expected_channels[l]} channels"
            )
        grams = powered_grams(arr, spec.orders, layer_index=l)
        stats.append(reduce_grams(grams, spec.variant))
    return stats


def _fit(records: Iterable, num_classes: int, orders, variant: StatVariant, kinds: tuple[int, ...]):
    """Single pass over records updating one table per requested metric kind."""
    ordered = normalize_orders(orders)
    tables = None
    spec = None
    channels = None
    for record in records:
        c = int(record.predicted_class)
        if not 0 <= c < num_classes:
            raise DataError(f"predicted class {c} out of range [0, {num_classes})")
        if tables is None:
            channels = [np.asarray(fm).shape[0] for fm in record.layers]
            spec = TableSpec(
                num_classes=num_classes,
                orders=ordered,
                feature_lengths=tuple(variant.feature_length(n) for n in channels),
                variant=variant,
            )
            tables = [
                BoundsTable.empty(spec) if kind == METRIC_MINMAX else MomentsTable.empty(spec)
                for kind in kinds
            ]
        stats = _iter_layer_stats(record, spec, channels)
        for table in tables:
            table.update(c, stats)
    if tables is None:
        raise EmptyStreamError("cannot fit a table from an empty record stream")
    return tables


def fit_bounds(records: Iterable, num_classes: int, orders, variant: StatVariant) -> BoundsTable:
    """Min/max bounds over a stream of activation records (predicted-class conditioned)."""
    return _fit(records, num_classes, orders, variant, (METRIC_MINMAX,))[0]


def fit_moments(records: Iterable, num_classes: int, orders, variant: StatVariant) -> MomentsTable:
    """Mean/population-variance moments via a numerically stable online update."""
    return _fit(records, num_classes, orders, variant, (METRIC_MEANVAR,))[0]


def merge(a: Table, b: Table) -> Table:
    """Combine two tables fitted on disjoint record partitions.

    Bounds merge element-wise (associative, commutative, exact). Moments
    merge with the pairwise parallel combination formula.
    """
    if a.spec != b.spec:
        raise ShapeMismatchError("cannot merge tables with different specs")
    if isinstance(a, BoundsTable) and isinstance(b, BoundsTable):
        return BoundsTable(
            spec=a.spec,
            mins=[np.minimum(x, y) for x, y in zip(a.mins, b.mins)],
            maxs=[np.maximum(x, y) for x, y in zip(a.maxs, b.maxs)],
            counts=a.counts + b.counts,
        )
    if isinstance(a, MomentsTable) and isinstance(b, MomentsTable):
        counts = a.counts + b.counts
        means, m2 = [], []
        na = a.counts.astype(np.float64)[:, None, None]
        nb = b.counts.astype(np.float64)[:, None, None]
        n = np.maximum(na + nb, 1.0)
        for l in range(a.spec.num_layers):
            delta = b.means[l] - a.means[l]
            means.append(a.means[l] + delta * nb / n)
            m2.append(a.m2[l] + b.m2[l] + delta * delta * na * nb / n)
        return MomentsTable(spec=a.spec, means=means, m2=m2, counts=counts)
    raise TypeError("cannot merge tables of different metric kinds")


def _metric_kind(table: Table) -> int:
    return METRIC_MINMAX if isinstance(table, BoundsTable) else METRIC_MEANVAR


def save_table(table: Table, path) -> None:
    """Serialize a table to the versioned GBND format (atomic write)."""
    spec = table.spec
    first, second = table.value_arrays()
    parts = [
        GBND_MAGIC,
        struct.pack(
            "<HBBIII",
            GBND_VERSION,
            _metric_kind(table),
            _VARIANT_CODES[spec.variant],
            spec.num_classes,
            spec.num_layers,
            spec.num_orders,
        ),
        struct.pack(f"<{spec.num_orders}I", *spec.orders),
        struct.pack(f"<{spec.num_layers}Q", *spec.feature_lengths),
    ]
    for arrays in (first, second):
        for c in range(spec.num_classes):
            for l in range(spec.num_layers):
                parts.append(np.ascontiguousarray(arrays[l][c], dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(table.counts, dtype="<u8").tobytes())
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"file ended while reading {what}")
    return buf


def load_table(path) -> Table:
    """Load a GBND table; the metric byte selects bounds vs moments."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GBND_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {GBND_MAGIC!r}")
        version, metric, variant_code, num_classes, num_layers, num_orders = struct.unpack(
            "<HBBIII", _read_exact(f, struct.calcsize("<HBBIII"), "header")
        )
        if version != GBND_VERSION:
            raise VersionError(f"unsupported GBND version {version}")
        if metric not in (METRIC_MINMAX, METRIC_MEANVAR):
            raise FormatError(f"unknown metric kind {metric}")
        if variant_code not in _CODE_VARIANTS:
            raise FormatError(f"unknown stat variant code {variant_code}")
        if num_classes < 1 or num_layers < 1:
            raise FormatError("table must declare at least one class and one layer")
        orders = struct.unpack(f"<{num_orders}I", _read_exact(f, 4 * num_orders, "orders"))
        lengths = struct.unpack(f"<{num_layers}Q", _read_exact(f, 8 * num_layers, "feature lengths"))
        if any(n < 1 for n in lengths):
            raise FormatError("feature lengths must be positive")
        spec = TableSpec(
            num_classes=num_classes,
            orders=tuple(int(p) for p in orders),
            feature_lengths=tuple(int(n) for n in lengths),
            variant=_CODE_VARIANTS[variant_code],
        )

        def read_cells() -> list[np.ndarray]:
            out = [
                np.empty((num_classes, num_orders, n), dtype=np.float64) for n in lengths
            ]
            for c in range(num_classes):
                for l, n in enumerate(lengths):
                    raw = _read_exact(f, 8 * num_orders * n, f"table cells (class {c}, layer {l})")
                    out[l][c] = np.frombuffer(raw, dtype="<f8").reshape(num_orders, n)
            return out

        first = read_cells()
        second = read_cells()
        counts = np.frombuffer(
            _read_exact(f, 8 * num_classes, "per-class counts"), dtype="<u8"
        ).astype(np.int64)
        if f.read(1):
            raise FormatError("trailing bytes after table payload")
    if metric == METRIC_MINMAX:
        return BoundsTable(spec=spec, mins=first, maxs=second, counts=counts)
    m2 = [second[l] * np.maximum(counts, 1).astype(np.float64)[:, None, None] for l in range(num_layers)]
    return MomentsTable(spec=spec, means=first, m2=m2, counts=counts)


def tables_equal(a: Table, b: Table) -> bool:
    """Structural equality (exact float comparison), mainly for round-trip tests."""
    if type(a) is not type(b) or a.spec != b.spec or not np.array_equal(a.counts, b.counts):
        return False
    fa, sa = a.value_arrays()
    fb, sb = b.value_arrays()
    return all(np.array_equal(x, y) for x, y in zip(fa + sa, fb + sb))
