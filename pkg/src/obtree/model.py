"""Oblivious decision-tree ensemble model: types, validation, leaf banks.

An oblivious tree tests one condition per depth level, so a tree of depth
``h`` is fully described by ``h`` split conditions plus a table of ``2**h``
leaf values.  A split condition is a (feature, border ordinal) pair: it is
true for an object iff the object's raw feature value strictly exceeds the
border at that ordinal, equivalently iff the object's one-byte quantile for
that feature strictly exceeds the ordinal.

All types are immutable after construction (ndarray payloads are marked
read-only), so models can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

MAX_BORDERS = 254   # quantiles must fit one byte with every comparison representable
MAX_DEPTH = 8       # leaf indices must fit one byte

# Flat leaf-value storage keeps this many zero elements after the last table so
# permute kernels may read a full vector group past any tree's padded table.
_BANK_TAIL_PAD = 256


class LeafPrecision(Enum):
    BINARY64 = "binary64"
    BINARY16 = "binary16"


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FloatFeatureBorders:
    """Sorted split thresholds for one float feature.

    ``borders`` must be strictly ascending binary32 values, at most 254 of
    them, so that the per-feature quantile (count of crossed borders) always
    fits in one byte.
    """

    feature_index: int
    borders: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.borders, dtype=np.float32)
        object.__setattr__(self, "borders", _readonly(arr))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FloatFeatureBorders):
            return NotImplemented
        return (
            self.feature_index == other.feature_index
            and self.borders.tobytes() == other.borders.tobytes()
        )


@dataclass(frozen=True)
class SplitCondition:
    """One oblivious split: true iff quantile(feature) > border_ordinal."""

    feature_index: int
    border_ordinal: int


@dataclass(frozen=True, eq=False)
class ObliviousTree:
    depth: int
    splits: tuple[SplitCondition, ...]
    leaf_values: np.ndarray  # binary64, length 2**depth

    def __post_init__(self) -> None:
        object.__setattr__(self, "splits", tuple(self.splits))
        arr = np.ascontiguousarray(self.leaf_values, dtype=np.float64)
        object.__setattr__(self, "leaf_values", _readonly(arr))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObliviousTree):
            return NotImplemented
        return (
            self.depth == other.depth
            and self.splits == other.splits
            and self.leaf_values.tobytes() == other.leaf_values.tobytes()
        )


@dataclass(frozen=True, eq=False)
class ObliviousModel:
    """A scored ensemble: prediction = scale * sum(tree leaf values) + bias."""

    float_features: tuple[FloatFeatureBorders, ...]
    trees: tuple[ObliviousTree, ...]
    scale: float
    bias: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "float_features", tuple(self.float_features))
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def n_features(self) -> int:
        return len(self.float_features)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObliviousModel):
            return NotImplemented
        return (
            self.float_features == other.float_features
            and self.trees == other.trees
            and _bits64(self.scale) == _bits64(other.scale)
            and _bits64(self.bias) == _bits64(other.bias)
        )


def _bits64(x: float) -> int:
    return int(np.float64(x).view(np.uint64))


def validate_model(model: ObliviousModel) -> list[str]:
    """Check every model invariant; return a list of violations (empty = ok).

    Each message carries the feature/tree coordinates of the violation so a
    bad model document can be fixed by hand.
    """
    errors: list[str] = []

    if model.n_features == 0:
        errors.append("model: at least one float feature is required")

    for i, ff in enumerate(model.float_features):
        where = f"float_features[{i}]"
        if ff.feature_index != i:
            errors.append(f"{where}: feature index {ff.feature_index} does not match position {i}")
        if ff.borders.size > MAX_BORDERS:
            errors.append(f"{where}: {ff.borders.size} borders exceed the limit of {MAX_BORDERS}")
        if np.isnan(ff.borders).any():
            errors.append(f"{where}: NaN border")
        elif ff.borders.size > 1 and not bool(np.all(ff.borders[1:] > ff.borders[:-1])):
            errors.append(f"{where}: non-ascending borders")

    for t, tree in enumerate(model.trees):
        where = f"trees[{t}]"
        if not 1 <= tree.depth <= MAX_DEPTH:
            errors.append(f"{where}: depth {tree.depth} outside 1..{MAX_DEPTH}")
            continue
        if len(tree.splits) != tree.depth:
            errors.append(f"{where}: {len(tree.splits)} splits for depth {tree.depth}")
        if tree.leaf_values.size != 1 << tree.depth:
            errors.append(
                f"{where}: {tree.leaf_values.size} leaf values, expected {1 << tree.depth}"
            )
        if np.isnan(tree.leaf_values).any():
            errors.append(f"{where}: NaN leaf value")
        for s, split in enumerate(tree.splits):
            swhere = f"{where}.splits[{s}]"
            if not 0 <= split.feature_index < model.n_features:
                errors.append(f"{swhere}: feature index {split.feature_index} out of range")
                continue
            n_borders = model.float_features[split.feature_index].borders.size
            if not 0 <= split.border_ordinal < n_borders:
                errors.append(
                    f"{swhere}: border ordinal out of range "
                    f"({split.border_ordinal} vs {n_borders} borders on feature {split.feature_index})"
                )

    return errors


def require_valid(model: ObliviousModel) -> None:
    errors = validate_model(model)
    if errors:
        raise ValueError("invalid model: " + "; ".join(errors))


def aligned_zeros(n: int, dtype, alignment: int = 64) -> np.ndarray:
    """Zero-filled 1-D array whose data pointer is aligned to ``alignment`` bytes."""
    itemsize = np.dtype(dtype).itemsize
    buf = np.zeros(n * itemsize + alignment, dtype=np.uint8)
    offset = (-buf.ctypes.data) % alignment
    return buf[offset : offset + n * itemsize].view(dtype)


HALF_MAX = 65504.0  # largest finite binary16 magnitude


def _pad_group(precision: LeafPrecision) -> int:
    # One 64-byte vector group: 8 binary64 lanes or 32 binary16 lanes.
    return 8 if precision is LeafPrecision.BINARY64 else 32


@dataclass(frozen=True, eq=False)
class LeafBank:
    """Per-tree contiguous leaf tables in one precision, padded and aligned.

    ``values`` is a single flat array; tree ``t`` owns
    ``values[offsets[t] : offsets[t] + padded_lengths[t]]``.  Every table
    starts on a 64-byte boundary and is padded with zeros to a whole number
    of 64-byte vector groups, so permute kernels may always load full
    groups.  ``saturation_count`` counts binary16 conversions clamped to
    +/-65504.
    """

    precision: LeafPrecision
    values: np.ndarray
    offsets: np.ndarray          # int64 per tree, in elements
    padded_lengths: np.ndarray   # int64 per tree, in elements
    max_abs_leaf: float
    saturation_count: int

    def table(self, tree_index: int) -> np.ndarray:
        start = int(self.offsets[tree_index])
        return self.values[start : start + int(self.padded_lengths[tree_index])]

    @property
    def n_trees(self) -> int:
        return self.offsets.size


def build_leaf_bank(model: ObliviousModel, precision: LeafPrecision) -> LeafBank:
    """Materialize the per-tree leaf tables used by the accumulation stage.

    Binary64 banks are bit-exact copies of the tree leaf values.  Binary16
    banks hold the round-to-nearest-even conversion of each leaf, saturated
    to +/-65504 (each clamp increments ``saturation_count``).
    """
    require_valid(model)
    group = _pad_group(precision)
    dtype = np.float64 if precision is LeafPrecision.BINARY64 else np.float16

    n = model.n_trees
    offsets = np.zeros(n, dtype=np.int64)
    padded = np.zeros(n, dtype=np.int64)
    pos = 0
    for t, tree in enumerate(model.trees):
        offsets[t] = pos
        padded[t] = -(-tree.leaf_values.size // group) * group
        pos += int(padded[t])

    values = aligned_zeros(pos + _BANK_TAIL_PAD, dtype)
    max_abs = 0.0
    saturated = 0
    for t, tree in enumerate(model.trees):
        leaves = tree.leaf_values
        if leaves.size:
            max_abs = max(max_abs, float(np.max(np.abs(leaves))))
        start = int(offsets[t])
        if precision is LeafPrecision.BINARY64:
            values[start : start + leaves.size] = leaves
        else:
            with np.errstate(over="ignore"):
                halves = leaves.astype(np.float16)
            overflow = np.isinf(halves)
            if overflow.any():
                saturated += int(overflow.sum())
                halves[overflow] = np.where(leaves[overflow] > 0, dtype(HALF_MAX), dtype(-HALF_MAX))
            values[start : start + leaves.size] = halves

    return LeafBank(
        precision=precision,
        values=_readonly(values),
        offsets=_readonly(offsets),
        padded_lengths=_readonly(padded),
        max_abs_leaf=max_abs,
        saturation_count=saturated,
    )
