"""Ground-truth scalar evaluation and half-precision deviation metrics.

The oracle never quantizes: each split condition is evaluated directly on the
raw binary32 feature value against the border it names, the leaf index is
assembled with the root condition in bit 0, and tree contributions are summed
in tree order.  That makes it independent of the quantizer, indexer and
accumulator kernels it is used to check.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model import LeafPrecision, ObliviousModel, build_leaf_bank, require_valid
from .quantize import FeatureMatrix


def evaluate_scalar(
    model: ObliviousModel,
    matrix: FeatureMatrix,
    leaf_precision: LeafPrecision = LeafPrecision.BINARY64,
) -> np.ndarray:
    """Per-object prediction by direct tree traversal on raw feature values.

    With BINARY16 leaf precision the traversal fetches from the binary16
    bank, widens each value to binary32, accumulates in binary32 and converts
    to binary64 once at the end, mirroring the half-precision pipeline.
    """
    require_valid(model)
    if matrix.n_features != model.n_features:
        raise ValueError(
            f"matrix has {matrix.n_features} features, model expects {model.n_features}"
        )
    n = matrix.n_objects
    wide = leaf_precision is LeafPrecision.BINARY64
    acc = np.zeros(n, dtype=np.float64 if wide else np.float32)
    bank16 = None if wide else build_leaf_bank(model, LeafPrecision.BINARY16)

    for t, tree in enumerate(model.trees):
        index = np.zeros(n, dtype=np.uint8)
        for d, split in enumerate(tree.splits):
            border = model.float_features[split.feature_index].borders[split.border_ordinal]
            values = matrix.feature_values(split.feature_index, 0, n)
            index |= (values > border).view(np.uint8) << np.uint8(d)
        if wide:
            acc += tree.leaf_values[index]
        else:
            acc += bank16.table(t)[index].astype(np.float32)

    sums = acc if wide else acc.astype(np.float64)
    return sums * model.scale + model.bias


@dataclass(frozen=True)
class DeviationMetrics:
    max_abs: float
    mean_abs: float
    median_abs: float
    rms: float


def deviation_metrics(a: np.ndarray, b: np.ndarray) -> DeviationMetrics:
    """Absolute-deviation statistics between two prediction vectors.

    The median is the lower middle element for even lengths.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("prediction vectors must be 1-D and the same length")
    if a.size == 0:
        raise ValueError("prediction vectors must not be empty")
    diffs = np.abs(a - b)
    ordered = np.sort(diffs)
    return DeviationMetrics(
        max_abs=float(ordered[-1]),
        mean_abs=float(diffs.mean()),
        median_abs=float(ordered[(diffs.size - 1) // 2]),
        rms=float(math.sqrt(float(np.mean(diffs * diffs)))),
    )


def classification_flip_count(a: np.ndarray, b: np.ndarray, threshold: float) -> int:
    """Objects whose predicted class differs between two score vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("prediction vectors must be the same length")
    return int(np.count_nonzero(np.sign(a - threshold) != np.sign(b - threshold)))
