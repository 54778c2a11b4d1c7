"""Stage 3: fetch leaf values by index and accumulate per-object sums.

Five strategies load the same values through different mechanics:

  NAIVE      elementwise indexed loads from the binary64 table.
  GATHER     indexed loads in gather-lane groups (4 or 8 binary64 lanes).
  PERMUTE64  the whole table is preloaded into vectors of 8 binary64 lanes;
             each object's index splits into a vector ordinal (high bits)
             and a lane ordinal (low 3 bits), and the value is selected by
             masked lane permutation over all vectors.
  PERMUTE16  the binary16 variant: 32 lanes per vector, low 5 bits select
             the lane; selected halves widen to binary32 before summation.
  NAIVE16    elementwise loads from the binary16 table, widened the same way.

Binary64 strategies accumulate in binary64; binary16 strategies accumulate
in binary32 and the engine converts to binary64 once per block.  Every
strategy adds per-tree contributions in the same order, so the binary64
family is bit-identical and the binary16 family matches the scalar
half-precision oracle exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import LeafPrecision
from .indexer import LeafIndexVector
from .quantize import VectorWidth


class LeafStrategy(Enum):
    NAIVE = "naive"
    GATHER = "gather"
    PERMUTE64 = "permute64"
    PERMUTE16 = "permute16"
    NAIVE16 = "naive16"

    @property
    def precision(self) -> LeafPrecision:
        if self in (LeafStrategy.PERMUTE16, LeafStrategy.NAIVE16):
            return LeafPrecision.BINARY16
        return LeafPrecision.BINARY64

    def allows_width(self, width: VectorWidth) -> bool:
        if self is LeafStrategy.GATHER:
            return width in (VectorWidth.W256, VectorWidth.W512)
        if self in (LeafStrategy.PERMUTE64, LeafStrategy.PERMUTE16):
            return width is VectorWidth.W512
        return True

    def object_group(self, width: VectorWidth) -> int:
        """Object-group size the strategy works in, for tail planning."""
        if self is LeafStrategy.PERMUTE64:
            return 8
        if self is LeafStrategy.PERMUTE16:
            return 32
        return width.byte_lanes


PERMUTE64_LANES = 8
PERMUTE16_LANES = 32


def permute_group_count(depth: int, lanes: int) -> int:
    """Number of source vectors needed to hold all 2**depth leaves."""
    return max(1, (1 << depth) // lanes)


@dataclass
class Accumulator:
    """Per-object running sums for one block, in the family's precision."""

    sums: np.ndarray

    @classmethod
    def zeros(cls, n_objects: int, precision: LeafPrecision) -> "Accumulator":
        dtype = np.float64 if precision is LeafPrecision.BINARY64 else np.float32
        return cls(sums=np.zeros(n_objects, dtype=dtype))

    @property
    def precision(self) -> LeafPrecision:
        return LeafPrecision.BINARY64 if self.sums.dtype == np.float64 else LeafPrecision.BINARY16


def accumulate_naive(indices: LeafIndexVector, table: np.ndarray, acc: Accumulator) -> None:
    """acc(o) += table[index(o)] via elementwise indexed loads."""
    n = acc.sums.size
    acc.sums += table[indices.indices[:n]]


def accumulate_naive16(indices: LeafIndexVector, table16: np.ndarray, acc: Accumulator) -> None:
    """Binary16 naive loads, widened to binary32 before summation."""
    n = acc.sums.size
    acc.sums += table16[indices.indices[:n]].astype(np.float32)


def accumulate_gather(
    indices: LeafIndexVector, table: np.ndarray, width: VectorWidth, acc: Accumulator
) -> None:
    """Indexed loads in gather-lane groups; values identical to NAIVE."""
    if width not in (VectorWidth.W256, VectorWidth.W512):
        raise ValueError("gather needs a 256-bit or 512-bit width")
    lanes = 4 if width is VectorWidth.W256 else 8  # binary64 lanes per gather
    n = acc.sums.size
    idx = indices.indices[:n]
    full = (n // lanes) * lanes
    for start in range(0, full, lanes):
        acc.sums[start : start + lanes] += np.take(table, idx[start : start + lanes])
    if full < n:
        acc.sums[full:] += table[idx[full:]]


def accumulate_permute64(indices: LeafIndexVector, table: np.ndarray, acc: Accumulator) -> None:
    """Masked-permute selection from preloaded 8-lane vectors, then add.

    ``table`` is a bank table padded to a multiple of 8 values.  Objects are
    processed in groups of 8; within a group, every source vector is merged
    exactly once, and an object's value survives the merge whose ordinal
    matches the high bits of its index.
    """
    if table.size % PERMUTE64_LANES:
        raise ValueError("permute64 table must be padded to a multiple of 8 values")
    vectors = table.reshape(-1, PERMUTE64_LANES)
    n_vectors = vectors.shape[0]
    n = acc.sums.size
    idx = indices.indices[:n]
    hi = idx >> np.uint8(3)
    lo = idx & np.uint8(7)
    for start in range(0, n, PERMUTE64_LANES):
        stop = min(start + PERMUTE64_LANES, n)
        group_hi = hi[start:stop]
        group_lo = lo[start:stop]
        merged = np.zeros(stop - start, dtype=np.float64)
        for g in range(n_vectors):
            merged = np.where(group_hi == g, vectors[g][group_lo], merged)
        acc.sums[start:stop] += merged


def accumulate_permute16(indices: LeafIndexVector, table16: np.ndarray, acc: Accumulator) -> None:
    """PERMUTE64 mechanics on 32 binary16 lanes, widening before the add."""
    if table16.size % PERMUTE16_LANES:
        raise ValueError("permute16 table must be padded to a multiple of 32 values")
    vectors = table16.reshape(-1, PERMUTE16_LANES)
    n_vectors = vectors.shape[0]
    n = acc.sums.size
    idx = indices.indices[:n]
    hi = idx >> np.uint8(5)
    lo = idx & np.uint8(31)
    for start in range(0, n, PERMUTE16_LANES):
        stop = min(start + PERMUTE16_LANES, n)
        group_hi = hi[start:stop]
        group_lo = lo[start:stop]
        merged = np.zeros(stop - start, dtype=np.float16)
        for g in range(n_vectors):
            merged = np.where(group_hi == g, vectors[g][group_lo], merged)
        acc.sums[start:stop] += merged.astype(np.float32)
