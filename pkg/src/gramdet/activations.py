"""Activation-dump files, dataset splitting and synthetic benchmark generation.

Binary activation format ("GACT", little-endian, no padding or alignment):

    magic "GACT" | version u16 = 1 | flags u16 (bit 0: values are f64, else f32)
    | num_classes u32 | num_layers u32
    | per layer: channels u32, pixels u32
    | record_count u64
    | records: predicted_class u32, then for each layer channels*pixels
      values row-major (channel-major)

Values are stored f32 by default; readers promote to f64 so all downstream
accumulation runs at 64-bit precision. Reading streams one record at a
time (constant memory per record).

The validation split shuffles record indices with Fisher-Yates driven by
SplitMix64, a named public 64-bit generator, so identical seeds give
identical splits on every platform and in any implementation of this
format.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError, FormatError, TruncatedError, VersionError

GACT_MAGIC = b"GACT"
GACT_VERSION = 1
FLAG_FLOAT64 = 1


class DatasetRole(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    ID_TEST = "id_test"
    OOD_TEST = "ood_test"


@dataclass(frozen=True)
class ActivationRecord:
    """One example: predicted class plus one feature map per layer."""

    predicted_class: int
    layers: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class GactHeader:
    num_classes: int
    layer_shapes: tuple[tuple[int, int], ...]
    record_count: int
    float64: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.layer_shapes)

    @property
    def record_bytes(self) -> int:
        item = 8 if self.float64 else 4
        return 4 + sum(ch * px * item for ch, px in self.layer_shapes)


@dataclass(frozen=True)
class DatasetHandle:
    path: Path
    header: GactHeader
    role: DatasetRole


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"file ended while reading {what}")
    return buf


def _read_header(f) -> GactHeader:
    magic = f.read(4)
    if magic != GACT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GACT_MAGIC!r}")
    version, flags, num_classes, num_layers = struct.unpack("<HHII", _read_exact(f, 12, "header"))
    if version != GACT_VERSION:
        raise VersionError(f"unsupported GACT version {version}")
    if num_layers < 1:
        raise FormatError("header declares zero layers")
    if num_classes < 1:
        raise FormatError("header declares zero classes")
    shapes = []
    for l in range(num_layers):
        ch, px = struct.unpack("<II", _read_exact(f, 8, f"layer {l} shape"))
        if ch < 1 or px < 1:
            raise FormatError(f"layer {l} declares an empty shape {ch}x{px}")
        shapes.append((ch, px))
    (record_count,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))
    return GactHeader(
        num_classes=num_classes,
        layer_shapes=tuple(shapes),
        record_count=record_count,
        float64=bool(flags & FLAG_FLOAT64),
    )


def read_header(path) -> GactHeader:
    with open(path, "rb") as f:
        return _read_header(f)


def open_dataset(path, role: DatasetRole = DatasetRole.ID_TEST) -> DatasetHandle:
    """Validate header and total size without reading the records."""
    path = Path(path)
    header = read_header(path)
    expected = _header_bytes_len(header) + header.record_count * header.record_bytes
    actual = path.stat().st_size
    if actual < expected:
        raise TruncatedError(f"file holds {actual} bytes, header implies {expected}")
    if actual > expected:
        raise FormatError(f"trailing bytes: file holds {actual} bytes, header implies {expected}")
    return DatasetHandle(path=path, header=header, role=role)


def _header_bytes_len(header: GactHeader) -> int:
    return 4 + 12 + 8 * header.num_layers + 8


def read_activations(path) -> Iterator[ActivationRecord]:
    """Stream records from a GACT file, one at a time.

    Shape and class validation happens per record; errors name the record
    index where the problem was found.
    """
    with open(path, "rb") as f:
        header = _read_header(f)
        dtype = "<f8" if header.float64 else "<f4"
        item = 8 if header.float64 else 4
        for i in range(header.record_count):
            raw = f.read(4)
            if len(raw) < 4:
                raise TruncatedError(f"file ended at record {i} (predicted class)")
            (predicted,) = struct.unpack("<I", raw)
            if predicted >= header.num_classes:
                raise DataError(
                    f"record {i} predicts class {predicted}, header allows [0, {header.num_classes})"
                )
            layers = []
            for l, (ch, px) in enumerate(header.layer_shapes):
                nbytes = ch * px * item
                buf = f.read(nbytes)
                if len(buf) < nbytes:
                    raise TruncatedError(f"file ended at record {i}, layer {l}")
                layers.append(np.frombuffer(buf, dtype=dtype).astype(np.float64).reshape(ch, px))
            yield ActivationRecord(predicted_class=int(predicted), layers=tuple(layers))
        if f.read(1):
            raise FormatError("trailing bytes after final record")


class GactWriter:
    """Streaming GACT writer; writes to a temp file and renames on close."""

    def __init__(self, path, num_classes: int, layer_shapes, float64: bool = False):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        shapes = tuple((int(c), int(p)) for c, p in layer_shapes)
        if not shapes or any(c < 1 or p < 1 for c, p in shapes):
            raise ValueError(f"invalid layer shapes {shapes}")
        self.path = Path(path)
        self.num_classes = num_classes
        self.layer_shapes = shapes
        self.float64 = float64
        self.count = 0
        self._tmp = self.path.with_name(self.path.name + f".tmp.{os.getpid()}")
        self._f = open(self._tmp, "wb")
        flags = FLAG_FLOAT64 if float64 else 0
        self._f.write(GACT_MAGIC)
        self._f.write(struct.pack("<HHII", GACT_VERSION, flags, num_classes, len(shapes)))
        for ch, px in shapes:
            self._f.write(struct.pack("<II", ch, px))
        self._count_offset = self._f.tell()
        self._f.write(struct.pack("<Q", 0))

    def append(self, record: ActivationRecord) -> None:
        c = int(record.predicted_class)
        if not 0 <= c < self.num_classes:
            raise DataError(f"predicted class {c} out of range [0, {self.num_classes})")
        if len(record.layers) != len(self.layer_shapes):
            raise DataError(
                f"record has {len(record.layers)} layers, file declares {len(self.layer_shapes)}"
            )
        dtype = "<f8" if self.float64 else "<f4"
        self._f.write(struct.pack("<I", c))
        for l, fm in enumerate(record.layers):
            arr = np.asarray(fm)
            if arr.shape != self.layer_shapes[l]:
                raise DataError(
                    f"record layer {l} has shape {arr.shape}, file declares {self.layer_shapes[l]}"
                )
            self._f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        self.count += 1

    def close(self) -> None:
        if self._f is None:
            return
        self._f.seek(self._count_offset)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()
        self._f = None
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None
            self._tmp.unlink(missing_ok=True)

    def __enter__(self) -> "GactWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.abort()


def write_activations(path, num_classes: int, layer_shapes, records: Iterable[ActivationRecord], float64: bool = False) -> int:
    with GactWriter(path, num_classes, layer_shapes, float64=float64) as w:
        for record in records:
            w.append(record)
        return w.count


_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 PRNG (public domain, Steele et al.); fixed 64-bit stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def shuffled_indices(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of range(n) driven by SplitMix64."""
    rng = SplitMix64(seed)
    idx = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def split_indices(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Validation/rest index split: floor(fraction*n) validation indices.

    Both halves come back sorted ascending so downstream passes preserve
    the source file's record order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    # slack keeps floor() at the mathematical value when fraction*n is integral
    take = math.floor(fraction * n + 1e-9)
    shuffled = shuffled_indices(n, seed)
    return sorted(shuffled[:take]), sorted(shuffled[take:])


def split_validation(handle: DatasetHandle, fraction: float = 0.10, seed: int = 0,
                     va_path=None, rest_path=None) -> tuple[DatasetHandle, DatasetHandle]:
    """Split a dataset file into a validation part and the remaining test part."""
    n = handle.header.record_count
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    va_idx, _ = split_indices(n, fraction, seed)
    members = set(va_idx)
    va_path = Path(va_path) if va_path else handle.path.with_suffix(".va.gact")
    rest_path = Path(rest_path) if rest_path else handle.path.with_suffix(".rest.gact")
    h = handle.header
    with GactWriter(va_path, h.num_classes, h.layer_shapes, float64=h.float64) as va_w, \
            GactWriter(rest_path, h.num_classes, h.layer_shapes, float64=h.float64) as rest_w:
        for i, record in enumerate(read_activations(handle.path)):
            (va_w if i in members else rest_w).append(record)
    return (
        open_dataset(va_path, DatasetRole.VALIDATION),
        open_dataset(rest_path, handle.role),
    )


OOD_KINDS = ("gaussian", "rademacher", "bernoulli", "shifted")


@dataclass(frozen=True)
class BenchmarkConfig:
    """Desk-scale synthetic benchmark with a knowable ground truth.

    In-distribution activations are Gaussian around class-specific mean
    maps (entries uniform in [1, 3], within-class sigma 0.15), mimicking
    well-separated post-ReLU features. OOD files draw from pure noise
    generators; the shifted kind overlaps the ID location but with a much
    wider spread.
    """

    num_classes: int = 10
    layer_shapes: tuple[tuple[int, int], ...] = ((8, 32), (16, 16), (12, 24))
    train_per_class: int = 100
    test_per_class: int = 30
    ood_count: int = 300
    ood_kind: str = "rademacher"
    seed: int = 0

    def __post_init__(self):
        if self.ood_kind not in OOD_KINDS:
            raise ValueError(f"ood_kind must be one of {OOD_KINDS}, got {self.ood_kind!r}")


def _id_record(rng, means, c) -> ActivationRecord:
    layers = tuple(m + 0.15 * rng.standard_normal(m.shape) for m in means[c])
    return ActivationRecord(predicted_class=c, layers=layers)


def _ood_record(rng, config: BenchmarkConfig) -> ActivationRecord:
    layers = []
    for shape in config.layer_shapes:
        if config.ood_kind == "gaussian":
            vals = rng.standard_normal(shape)
        elif config.ood_kind == "shifted":
            vals = 2.0 + 1.5 * rng.standard_normal(shape)
        elif config.ood_kind == "rademacher":
            vals = rng.integers(0, 2, shape).astype(np.float64) * 2.0 - 1.0
        else:  # bernoulli
            vals = rng.integers(0, 2, shape).astype(np.float64)
        layers.append(vals)
    predicted = int(rng.integers(0, config.num_classes))
    return ActivationRecord(predicted_class=predicted, layers=tuple(layers))


def generate_synthetic_benchmark(config: BenchmarkConfig, out_dir) -> dict[str, Path]:
    """Write train.gact, id_test.gact and ood_<kind>.gact; deterministic in the seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    means = [
        [rng.uniform(1.0, 3.0, shape) for shape in config.layer_shapes]
        for _ in range(config.num_classes)
    ]
    paths = {
        "train": out_dir / "train.gact",
        "id_test": out_dir / "id_test.gact",
        "ood_test": out_dir / f"ood_{config.ood_kind}.gact",
    }

    def id_records(per_class):
        for c in range(config.num_classes):
            for _ in range(per_class):
                yield _id_record(rng, means, c)

    write_activations(paths["train"], config.num_classes, config.layer_shapes,
                      id_records(config.train_per_class))
    write_activations(paths["id_test"], config.num_classes, config.layer_shapes,
                      id_records(config.test_per_class))
    write_activations(paths["ood_test"], config.num_classes, config.layer_shapes,
                      (_ood_record(rng, config) for _ in range(config.ood_count)))
    return paths
