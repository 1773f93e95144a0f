"""
Binary container for parameters and datasets.

Layout (little-endian):
    magic "FQUF", version u32, count u32,
    per float entry: name length u32, name bytes (utf-8), 4 x u64 shape, f64 payload
    optional labels section: count u32,
    per label entry: name length u32, name bytes, 4 x u64 shape, u16 payload

Ranks below 4 are stored with the unused trailing shape slots set to 0, so
a rank-1 bias of 8 values is written as (8, 0, 0, 0) and a scalar as
(0, 0, 0, 0). Zero-length dimensions are therefore rejected on write.
Checkpoints carry no labels section; dataset caches carry one.
"""

import logging
import os
import struct
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"FQUF"
VERSION = 1


def _pack_shape(shape: Tuple[int, ...], name: str) -> bytes:
    if len(shape) > 4:
        raise CheckpointError(f"entry '{name}' has rank {len(shape)} > 4")
    if 0 in shape:
        raise CheckpointError(f"entry '{name}' has a zero-length dimension, shape {tuple(shape)}")
    padded = tuple(shape) + (0,) * (4 - len(shape))
    return struct.pack("<4Q", *padded)


def _write_entries(fh, entries: Mapping[str, np.ndarray], dtype: str):
    fh.write(struct.pack("<I", len(entries)))
    for name, array in entries.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(_pack_shape(array.shape, name))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def write_container(path: str, arrays: Mapping[str, np.ndarray],
                    labels: Optional[Mapping[str, np.ndarray]] = None):
    """Writes float arrays (and optionally integer label arrays) to `path`.

    Args:
        path: Destination file.
        arrays: Name to float array, written as f64.
        labels: Name to integer array, written as u16.
    """
    if labels:
        for name, arr in labels.items():
            if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max):
                raise CheckpointError(f"labels entry '{name}' does not fit in u16")
    for name, arr in list(arrays.items()) + list((labels or {}).items()):
        _pack_shape(arr.shape, name)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_entries(fh, arrays, "<f8")
        if labels:
            _write_entries(fh, labels, "<u2")
    logger.debug("wrote container path=%s entries=%d", path, len(arrays))


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated container at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def entries(self, dtype: str, itemsize: int) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode("utf-8")
            dims = struct.unpack("<4Q", self.take(32))
            shape = tuple(d for d in dims if d != 0)
            count = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(self.take(count * itemsize), dtype=dtype).reshape(shape).copy()
        return out


def read_container(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Reads a container written by `write_container`.

    Returns:
        (float arrays, label arrays); the second dict is empty for checkpoints.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    reader = _Reader(buf, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a frequnet container")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    arrays = {name: arr.astype(np.float64) for name, arr in reader.entries("<f8", 8).items()}
    labels: Dict[str, np.ndarray] = {}
    if reader.pos < len(buf):
        labels = {name: arr.astype(np.int64) for name, arr in reader.entries("<u2", 2).items()}
    if reader.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - reader.pos} trailing bytes")
    return arrays, labels
