"""Dual-path strip scan orders for flattening feature maps into sequences.

The grid is divided into non-overlapping strips of ``strip_size`` rows
(horizontal orientation) or columns (vertical orientation); a short final
strip absorbs the remainder. Within a horizontal strip the cells are walked
column by column in a serpentine: the first visited column runs top to
bottom, the next bottom to top, and so on, so consecutive cells inside a
strip are always grid neighbours. Strips alternate their column sweep
direction (even strips left to right, odd strips right to left), which makes
each strip begin in the column where the previous one ended; the jump across
a strip boundary stays in one column and moves at most ``strip_size`` rows.
The vertical orientation is the same construction on the transposed grid.

Cell identity is the row-major flat index row * W + col, matching the
(H, W, C) -> (H*W, C) reshape in the tensor module, so a permutation array
is all that serialization needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import ConfigurationError, DimensionError, Tensor, reshape, take_rows


class Orientation(Enum):
    HORIZONTAL = "h"
    VERTICAL = "v"


@dataclass(frozen=True)
class ScanOrder:
    """A fixed bijection between grid cells and sequence positions."""

    height: int
    width: int
    strip_size: int
    orientation: Orientation
    perm: np.ndarray      # perm[t] = flat cell index visited at time t
    inv_perm: np.ndarray  # inv_perm[flat] = visit time of that cell

    def __len__(self) -> int:
        return self.height * self.width


def _horizontal_perm(height: int, width: int, strip_size: int) -> np.ndarray:
    perm = []
    for k, r0 in enumerate(range(0, height, strip_size)):
        r1 = min(r0 + strip_size, height)
        cols = range(width) if k % 2 == 0 else range(width - 1, -1, -1)
        for j, c in enumerate(cols):
            rows = range(r0, r1) if j % 2 == 0 else range(r1 - 1, r0 - 1, -1)
            perm.extend(r * width + c for r in rows)
    return np.asarray(perm, dtype=np.int64)


def build_strip_zigzag(
    height: int, width: int, strip_size: int, orientation: Orientation
) -> ScanOrder:
    if height < 1 or width < 1:
        raise ConfigurationError(f"scan order: grid extents must be positive, got {height}x{width}")
    limit = height if orientation is Orientation.HORIZONTAL else width
    if not 1 <= strip_size <= limit:
        raise ConfigurationError(
            f"scan order: strip size {strip_size} outside [1, {limit}] for {height}x{width} {orientation.value}"
        )
    if orientation is Orientation.HORIZONTAL:
        perm = _horizontal_perm(height, width, strip_size)
    else:
        # Transposed construction: walk a width x height grid horizontally,
        # then map each transposed cell (r', c') back to (row=c', col=r').
        tperm = _horizontal_perm(width, height, strip_size)
        r_t, c_t = tperm // height, tperm % height
        perm = c_t * width + r_t
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=np.int64)
    perm.setflags(write=False)
    inv.setflags(write=False)
    return ScanOrder(height, width, strip_size, orientation, perm, inv)


@dataclass(frozen=True)
class DualPath:
    """One horizontal-strip and one vertical-strip order over the same grid."""

    horizontal: ScanOrder
    vertical: ScanOrder


def build_dual_path(height: int, width: int, strip_size: int) -> DualPath:
    return DualPath(
        build_strip_zigzag(height, width, strip_size, Orientation.HORIZONTAL),
        build_strip_zigzag(height, width, strip_size, Orientation.VERTICAL),
    )


def serialize(x: Tensor, order: ScanOrder) -> Tensor:
    """(H, W, C) feature map -> (H*W, C) sequence in scan order."""
    if x.ndim != 3 or x.shape[0] != order.height or x.shape[1] != order.width:
        raise DimensionError(
            f"serialize: feature map {x.shape} does not match order grid "
            f"{order.height}x{order.width}"
        )
    flat = reshape(x, (order.height * order.width, x.shape[2]))
    return take_rows(flat, order.perm)


def deserialize(seq: Tensor, order: ScanOrder) -> Tensor:
    """(H*W, C) sequence in scan order -> (H, W, C) feature map."""
    if seq.ndim != 2 or seq.shape[0] != len(order):
        raise DimensionError(
            f"deserialize: sequence {seq.shape} does not match order length {len(order)}"
        )
    back = take_rows(seq, order.inv_perm)
    return reshape(back, (order.height, order.width, seq.shape[1]))
