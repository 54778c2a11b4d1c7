"""Stage 2: turn quantile bytes into per-object leaf indices for one tree.

The condition at depth d contributes bit d of the leaf index, with the root
condition in the least significant bit, so the index is assembled with
branch-free compare/shift/or over byte lanes.  Indices are bytes because
tree depth is capped at 8.
"""

from __future__ import annotations

import numpy as np

from .model import ObliviousTree, SplitCondition, aligned_zeros
from .quantize import QuantizedBlock, VectorWidth


class LeafIndexVector:
    """One leaf index byte per object slot; padding slots stay 0."""

    __slots__ = ("block_size", "indices")

    def __init__(self, block_size: int):
        self.block_size = block_size
        self.indices = aligned_zeros(block_size, np.uint8)


def condition_bits(
    block: QuantizedBlock, split: SplitCondition, width: VectorWidth
) -> np.ndarray:
    """0/1 byte per object: 1 iff quantile(split.feature) > split.border_ordinal."""
    if not 0 <= split.feature_index < block.n_features:
        raise ValueError(f"split references feature {split.feature_index} outside the block")
    if not width.is_supported():
        raise ValueError(f"vector width {width.value} not supported on this host")
    row = block.quantiles[split.feature_index]
    return (row > np.uint8(split.border_ordinal)).view(np.uint8).copy()


def compute_leaf_indices(
    block: QuantizedBlock,
    tree: ObliviousTree,
    width: VectorWidth,
    out: LeafIndexVector,
) -> None:
    """index(o) = sum over depths d of [condition_d(o)] << d, root at bit 0."""
    if out.block_size != block.block_size:
        raise ValueError("index vector and block sizes differ")
    if not width.is_supported():
        raise ValueError(f"vector width {width.value} not supported on this host")
    if any(s.feature_index >= block.n_features for s in tree.splits):
        raise ValueError("tree references a feature outside the quantized block")
    idx = out.indices
    idx[:] = 0
    for d, split in enumerate(tree.splits):
        row = block.quantiles[split.feature_index]
        bits = (row > np.uint8(split.border_ordinal)).view(np.uint8)
        idx |= bits << np.uint8(d)
