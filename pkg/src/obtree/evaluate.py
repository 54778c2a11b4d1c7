"""Orchestration of the three-stage pipeline over blocks and batches.

A batch is split into cache-sized blocks; each block is quantized, then every
tree's leaf indices are computed and its leaf values accumulated, and the
scale/bias transform finalizes the block's predictions.  Per-tree
contributions are summed in tree order with a strict left fold, so results do
not depend on the block plan, the input layout, the lane width, or the tail
policy (the binary64 strategy family is bit-identical end to end).

The hot path fuses the per-tree loop of stages 2 and 3 into array operations
over a (trees x objects) panel; the per-tree kernels in ``indexer`` and
``accumulate`` define the same semantics one tree at a time and the test
suite holds both paths equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .accumulate import LeafStrategy, PERMUTE16_LANES, PERMUTE64_LANES
from .model import LeafBank, LeafPrecision, ObliviousModel, build_leaf_bank, require_valid
from .quantize import FeatureMatrix, QuantizedBlock, VectorWidth, quantize_block

BLOCK_SIZES = (64, 128, 256, 512)

# Padding rows in a quantized block are all zero, so a padded object's split
# conditions are all false: its leaf index is 0 and its (discarded)
# contribution is leaf[0], which is always a finite value.
_SENTINEL_ORDINAL = 255  # quantiles are <= 254, so this condition is never true


class TailPolicy(Enum):
    SCALAR_TAIL = "scalar"
    PADDED_GROUP = "padded"


@dataclass(frozen=True)
class TailPlan:
    """How one block's live objects map onto vector groups.

    SCALAR_TAIL runs whole groups through the vector path and the remainder
    through the scalar path.  PADDED_GROUP rounds up to whole groups; the
    padded lanes are computed on zero quantile rows and discarded at
    write-back.  Both cover every live object exactly once.
    """

    policy: TailPolicy
    group_size: int
    live: int
    vector_groups: int
    scalar_remainder: int
    padded_lanes: int

    @property
    def cover(self) -> int:
        """Number of object slots stages 2 and 3 compute for this block."""
        return self.live + self.padded_lanes

    def segments(self) -> list[tuple[int, int]]:
        """Column ranges to execute, vector part first."""
        vector_cover = self.vector_groups * self.group_size
        out = []
        if vector_cover:
            out.append((0, vector_cover))
        if self.scalar_remainder:
            out.append((vector_cover, self.live))
        return out


def apply_tail_policy(policy: TailPolicy, group_size: int, live: int) -> TailPlan:
    if group_size < 1:
        raise ValueError("group size must be positive")
    if live < 0:
        raise ValueError("live object count must be non-negative")
    if policy is TailPolicy.SCALAR_TAIL:
        groups = live // group_size
        return TailPlan(
            policy=policy,
            group_size=group_size,
            live=live,
            vector_groups=groups,
            scalar_remainder=live - groups * group_size,
            padded_lanes=0,
        )
    groups = -(-live // group_size)
    return TailPlan(
        policy=policy,
        group_size=group_size,
        live=live,
        vector_groups=groups,
        scalar_remainder=0,
        padded_lanes=groups * group_size - live,
    )


def plan_blocks(n_objects: int, block_size: int) -> list[tuple[int, int]]:
    """Consecutive disjoint [begin, end) ranges covering the batch."""
    if block_size < 1:
        raise ValueError("block size must be positive")
    return [(b, min(b + block_size, n_objects)) for b in range(0, n_objects, block_size)]


@dataclass(frozen=True)
class EvalConfig:
    block_size: int = 128
    width: VectorWidth = field(default_factory=VectorWidth.widest_supported)
    strategy: LeafStrategy = LeafStrategy.NAIVE
    tail_policy: TailPolicy = TailPolicy.SCALAR_TAIL

    @property
    def object_group(self) -> int:
        return self.strategy.object_group(self.width)

    def validate(self) -> None:
        if self.block_size not in BLOCK_SIZES:
            raise ValueError(f"block size must be one of {BLOCK_SIZES}")
        if not self.width.is_supported():
            raise ValueError(f"vector width {self.width.value} not supported on this host")
        if not self.strategy.allows_width(self.width):
            raise ValueError(
                f"strategy {self.strategy.value} is incompatible with width {self.width.value}"
            )
        if self.block_size < self.object_group:
            raise ValueError(
                f"block size {self.block_size} below the object group of {self.object_group}"
            )

    def describe(self) -> str:
        return (
            f"{self.strategy.value}-{self.width.value}-b{self.block_size}"
            f"-{self.tail_policy.value}"
        )


class ModelTables:
    """Derived arrays shared by every evaluation of one model.

    Split conditions are packed into (trees x max_depth) panels; trees
    shallower than the deepest are padded with a condition that can never
    hold, which contributes a zero bit.  Leaf banks are built per precision
    on first use.
    """

    def __init__(self, model: ObliviousModel):
        require_valid(model)
        self.model = model
        self.borders = [ff.borders for ff in model.float_features]
        self.n_trees = model.n_trees
        self.max_depth = max((t.depth for t in model.trees), default=0)
        self._banks: dict[LeafPrecision, LeafBank] = {}

        shape = (self.n_trees, self.max_depth)
        self.split_feature = np.zeros(shape, dtype=np.int32)
        self.split_ordinal = np.full(shape, _SENTINEL_ORDINAL, dtype=np.uint8)
        for t, tree in enumerate(model.trees):
            for d, split in enumerate(tree.splits):
                self.split_feature[t, d] = split.feature_index
                self.split_ordinal[t, d] = split.border_ordinal

    def bank(self, precision: LeafPrecision) -> LeafBank:
        if precision not in self._banks:
            self._banks[precision] = build_leaf_bank(self.model, precision)
        return self._banks[precision]


# np.cumsum along an axis is a strict sequential left fold on every platform
# we know of, which makes it a fast stand-in for the per-tree accumulation
# loop.  Probe once at import and fall back to the explicit loop if the
# identity ever stops holding (e.g. a SIMD prefix scan that reassociates).
def _cumsum_is_left_fold(dtype) -> bool:
    span = np.arange(192, dtype=np.float64)
    data = (((-1.0) ** span) * 2.0 ** (span % 37 - 18) * (span + 1.0)).reshape(64, 3)
    data = data.astype(dtype)
    folded = np.zeros(3, dtype=dtype)
    for row in data:
        folded += row
    return bool(np.array_equal(np.cumsum(data, axis=0)[-1], folded))


_SEQUENTIAL_CUMSUM = {
    np.dtype(np.float64): _cumsum_is_left_fold(np.float64),
    np.dtype(np.float32): _cumsum_is_left_fold(np.float32),
}


def _fold_rows(contrib: np.ndarray, acc: np.ndarray) -> None:
    """acc += rows of ``contrib`` added top to bottom (tree order)."""
    if _SEQUENTIAL_CUMSUM[contrib.dtype]:
        np.cumsum(contrib, axis=0, out=contrib)
        acc += contrib[-1]
    else:
        for row in contrib:
            acc += row


def _leaf_index_panel(tables: ModelTables, quantiles: np.ndarray) -> np.ndarray:
    """(trees x objects) leaf indices from a quantile segment, branch-free."""
    n_cols = quantiles.shape[1]
    idx = np.zeros((tables.n_trees, n_cols), dtype=np.uint8)
    for k in range(tables.max_depth):
        rows = quantiles[tables.split_feature[:, k]]
        bits = (rows > tables.split_ordinal[:, k, None]).view(np.uint8)
        idx |= bits << np.uint8(k)
    return idx


def _fold_block_segment(
    tables: ModelTables,
    bank: LeafBank,
    strategy: LeafStrategy,
    quantiles: np.ndarray,
    acc: np.ndarray,
) -> None:
    """Run stages 2 and 3 for all trees over one column segment of a block."""
    if tables.n_trees == 0:
        return
    idx = _leaf_index_panel(tables, quantiles)
    offsets = bank.offsets[:, None]
    flat = bank.values

    if strategy in (LeafStrategy.NAIVE, LeafStrategy.GATHER):
        contrib = flat[offsets + idx]
    elif strategy is LeafStrategy.NAIVE16:
        contrib = flat[offsets + idx].astype(np.float32)
    elif strategy is LeafStrategy.PERMUTE64:
        hi = idx >> np.uint8(3)
        lo = idx & np.uint8(7)
        n_vectors = int(bank.padded_lengths.max()) // PERMUTE64_LANES
        contrib = np.zeros(idx.shape, dtype=np.float64)
        for g in range(n_vectors):
            selected = flat[offsets + g * PERMUTE64_LANES + lo]
            contrib = np.where(hi == g, selected, contrib)
    elif strategy is LeafStrategy.PERMUTE16:
        hi = idx >> np.uint8(5)
        lo = idx & np.uint8(31)
        n_vectors = int(bank.padded_lengths.max()) // PERMUTE16_LANES
        merged = np.zeros(idx.shape, dtype=np.float16)
        for g in range(n_vectors):
            selected = flat[offsets + g * PERMUTE16_LANES + lo]
            merged = np.where(hi == g, selected, merged)
        contrib = merged.astype(np.float32)
    else:
        raise AssertionError(f"unhandled strategy {strategy}")

    _fold_rows(contrib, acc)


class Evaluator:
    """A model prepared for repeated evaluation under one configuration."""

    def __init__(
        self,
        model: ObliviousModel | ModelTables,
        config: EvalConfig | None = None,
    ):
        self.tables = model if isinstance(model, ModelTables) else ModelTables(model)
        self.config = config or EvalConfig()
        self.config.validate()
        self.bank = self.tables.bank(self.config.strategy.precision)

    @property
    def model(self) -> ObliviousModel:
        return self.tables.model

    def predict(self, matrix: FeatureMatrix) -> np.ndarray:
        """Raw scores for every object in the batch, in input order."""
        model = self.tables.model
        if matrix.n_features != model.n_features:
            raise ValueError(
                f"matrix has {matrix.n_features} features, model expects {model.n_features}"
            )
        cfg = self.config
        n = matrix.n_objects
        out = np.empty(n, dtype=np.float64)
        if n == 0:
            return out

        wide_family = cfg.strategy.precision is LeafPrecision.BINARY64
        group = cfg.object_group
        qblock = QuantizedBlock(model.n_features, cfg.block_size)

        for begin, end in plan_blocks(n, cfg.block_size):
            live = end - begin
            plan = apply_tail_policy(cfg.tail_policy, group, live)
            quantize_block(matrix, (begin, end), self.tables.borders, cfg.width, qblock)
            acc = np.zeros(plan.cover, dtype=np.float64 if wide_family else np.float32)
            for s0, s1 in plan.segments():
                _fold_block_segment(
                    self.tables,
                    self.bank,
                    cfg.strategy,
                    qblock.quantiles[:, s0:s1],
                    acc[s0:s1],
                )
            sums = acc[:live] if wide_family else acc[:live].astype(np.float64)
            out[begin:end] = sums * model.scale + model.bias
        return out


def evaluate(
    model: ObliviousModel, matrix: FeatureMatrix, config: EvalConfig | None = None
) -> np.ndarray:
    """One-shot evaluation; use ``Evaluator`` to amortize model preparation."""
    return Evaluator(model, config).predict(matrix)
