"""Binary checkpoint files.

Layout (little-endian)::

    magic        4s   b"SISA"
    version      u16
    shard        u32
    slice_after  u32
    arch tag     u8   0 = logistic, 1 = mlp
    feature_dim  u32
    num_classes  u32
    hidden_width u32  0 for logistic
    samples_seen u64
    weight count u64
    weights      f64 * count
    crc32        u32  over every preceding byte
"""
from __future__ import annotations

import hashlib
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, NumericalError, VersionError
from .learner import LOGISTIC, MLP, Arch, ModelParams

__all__ = [
    "Checkpoint",
    "FORMAT_VERSION",
    "encode_checkpoint",
    "decode_checkpoint",
    "checkpoint_path",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"SISA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIBIIIQQ")
_CRC = struct.Struct("<I")
_ARCH_TAGS = {LOGISTIC: 0, MLP: 1}
_TAG_ARCH = {v: k for k, v in _ARCH_TAGS.items()}


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Constituent state after ``slice_after`` slices have been incorporated."""

    shard: int
    slice_after: int
    params: ModelParams
    samples_seen: int

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return encode_checkpoint(self) == encode_checkpoint(other)

    __hash__ = None

    def digest(self) -> str:
        # not crc32: a CRC over bytes that end in their own CRC is a constant
        return hashlib.sha256(encode_checkpoint(self)).hexdigest()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    w = np.ascontiguousarray(p.weights, dtype="<f8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, ckpt.shard, ckpt.slice_after,
                          _ARCH_TAGS[p.arch.kind], p.feature_dim, p.num_classes,
                          p.arch.hidden_width, ckpt.samples_seen, w.size)
    body = header + w.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + _CRC.size:
        raise IntegrityError(f"checkpoint truncated ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise IntegrityError(f"bad magic {data[:4]!r}")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("checksum mismatch")
    (_, version, shard, slice_after, tag, dim, ncls, hidden,
     samples, count) = _HEADER.unpack_from(body)
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(body) != _HEADER.size + 8 * count:
        raise IntegrityError(f"weight count {count} does not match payload length")
    if tag not in _TAG_ARCH:
        raise IntegrityError(f"unknown arch tag {tag}")
    weights = np.frombuffer(body, dtype="<f8", count=count, offset=_HEADER.size).astype(np.float64)
    try:
        params = ModelParams(Arch(_TAG_ARCH[tag], hidden), dim, ncls, weights)
    except (ValueError, NumericalError) as exc:
        raise IntegrityError(f"inconsistent checkpoint: {exc}") from None
    return Checkpoint(shard, slice_after, params, samples)


def checkpoint_path(store, shard: int, slice_after: int) -> Path:
    return Path(store) / f"shard_{shard:04d}" / f"slice_{slice_after:04d}.ckpt"


def save_checkpoint(store, ckpt: Checkpoint) -> Path:
    """Write ``ckpt`` under ``store`` (atomic rename); returns the file path."""
    path = checkpoint_path(store, ckpt.shard, ckpt.slice_after)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(store, shard: int | None = None, slice_after: int | None = None) -> Checkpoint:
    """Read a checkpoint by file path, or by ``(store, shard, slice_after)``."""
    path = Path(store) if shard is None else checkpoint_path(store, shard, slice_after)
    return decode_checkpoint(path.read_bytes())
