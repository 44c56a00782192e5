"""Standalone writer for the engine's GACT activation-dump format.

This is a second, independent implementation of the documented byte
layout (the format is the contract between exporter and engine, not any
shared code):

    magic "GACT" | version u16 = 1 | flags u16 (bit 0: f64 values)
    | num_classes u32 | num_layers u32
    | per layer: channels u32, pixels u32
    | record_count u64
    | records: predicted_class u32, then per layer channels*pixels values
      row-major

Values are written f32, little-endian, no padding.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GACT"
VERSION = 1


class GactFileWriter:
    def __init__(self, path, num_classes: int, layer_shapes):
        self.path = Path(path)
        self.num_classes = int(num_classes)
        self.layer_shapes = tuple((int(c), int(p)) for c, p in layer_shapes)
        self.count = 0
        self._tmp = self.path.with_name(self.path.name + f".tmp.{os.getpid()}")
        self._f = open(self._tmp, "wb")
        self._f.write(MAGIC)
        self._f.write(struct.pack("<HHII", VERSION, 0, self.num_classes, len(self.layer_shapes)))
        for ch, px in self.layer_shapes:
            self._f.write(struct.pack("<II", ch, px))
        self._count_offset = self._f.tell()
        self._f.write(struct.pack("<Q", 0))

    def append(self, predicted_class: int, layers) -> None:
        if not 0 <= predicted_class < self.num_classes:
            raise ValueError(f"predicted class {predicted_class} out of range")
        self._f.write(struct.pack("<I", predicted_class))
        for shape, values in zip(self.layer_shapes, layers, strict=True):
            arr = np.ascontiguousarray(values, dtype="<f4").reshape(shape)
            self._f.write(arr.tobytes())
        self.count += 1

    def close(self) -> None:
        if self._f is None:
            return
        self._f.seek(self._count_offset)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()
        self._f = None
        os.replace(self._tmp, self.path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        elif self._f is not None:
            self._f.close()
            self._f = None
            self._tmp.unlink(missing_ok=True)
