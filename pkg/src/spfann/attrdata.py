"""Per-vector attribute payload and its fixed-size wire codec.

Each vector carries a set of integer labels plus one numeric range value.
The serialized form lives inside every graph record so a fetched record
always includes the exact attributes needed for verification.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BuildError


@dataclass
class VectorAttrs:
    labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    value: float = 0.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


def max_labels_for(attr_bytes_max: int) -> int:
    # u16 label count + u32 per label + f32 range value
    return (attr_bytes_max - 2 - 4) // 4


def encode_attrs(attrs: VectorAttrs, attr_bytes_max: int) -> bytes:
    labels = np.asarray(attrs.labels, dtype=np.int64)
    need = 2 + 4 * labels.size + 4
    if need > attr_bytes_max:
        raise BuildError(
            f"attributes need {need} bytes but the record reserves "
            f"{attr_bytes_max}; rebuild with attr_bytes_max >= {need}"
        )
    if not math.isfinite(attrs.value):
        raise BuildError("range value must be finite")
    out = bytearray(attr_bytes_max)
    struct.pack_into("<H", out, 0, labels.size)
    out[2 : 2 + 4 * labels.size] = labels.astype("<u4").tobytes()
    struct.pack_into("<f", out, 2 + 4 * labels.size, attrs.value)
    return bytes(out)


def decode_attrs(buf: bytes) -> VectorAttrs:
    (count,) = struct.unpack_from("<H", buf, 0)
    labels = np.frombuffer(buf, dtype="<u4", count=count, offset=2).astype(np.int64)
    (value,) = struct.unpack_from("<f", buf, 2 + 4 * count)
    return VectorAttrs(labels=labels, value=float(value))
