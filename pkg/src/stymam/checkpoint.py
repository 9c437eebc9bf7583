"""Flat binary checkpoint container.

Layout, all integers little-endian:

    8 bytes   magic "STYMAM1\\0"
    u32       entry count
    per entry u16 name length, name bytes (utf-8), u8 rank,
              u32 per-axis extent, u64 absolute data offset
    data      raw little-endian float64 values, one block per entry at its
              stated offset, in entry order

Writing the same mapping twice produces identical bytes: entry order is the
mapping's insertion order and offsets are derived, never padded.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"STYMAM1\x00"


class CheckpointError(Exception):
    """Base for checkpoint load problems."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the manifest or a data block completes."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor is missing or does not match the expected shape."""


def save_checkpoint(named: dict, path) -> None:
    """Write a name -> array mapping; Tensor values are unwrapped."""
    entries = []
    for name, value in named.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        entries.append((name.encode("utf-8"), arr))

    header_size = len(MAGIC) + 4
    for name_b, arr in entries:
        header_size += 2 + len(name_b) + 1 + 4 * arr.ndim + 8

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(entries))
    offset = header_size
    for name_b, arr in entries:
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += struct.pack("<Q", offset)
        offset += 8 * arr.size
    for _, arr in entries:
        blob += arr.astype("<f8", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float64 array mapping."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if len(raw) < len(MAGIC) or not raw.startswith(MAGIC):
        raise CheckpointMagicError(f"{path}: magic mismatch, not a checkpoint")

    pos = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointTruncatedError(f"{path}: truncated while reading {what}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"shape of {name}")) if rank else ()
        (offset,) = struct.unpack("<Q", take(8, f"offset of {name}"))
        manifest.append((name, shape, offset))

    out = {}
    for name, shape, offset in manifest:
        size = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        if offset + size > len(raw):
            raise CheckpointTruncatedError(f"{path}: truncated in data of {name}")
        arr = np.frombuffer(raw[offset : offset + size], dtype="<f8").astype(np.float64)
        out[name] = arr.reshape(shape)
    return out


def shape_checked_lookup(named: dict, source: str):
    """A lookup(name, shape) closure that raises CheckpointShapeError."""

    def lookup(name: str, shape: tuple) -> np.ndarray:
        if name not in named:
            raise CheckpointShapeError(f"{source}: tensor {name} missing")
        arr = named[name]
        if arr.shape != tuple(shape):
            raise CheckpointShapeError(
                f"{source}: tensor {name} has shape {arr.shape}, expected {tuple(shape)}"
            )
        return arr.copy()

    return lookup
