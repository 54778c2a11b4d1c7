"""obtree: single-core batch evaluation of oblivious decision-tree ensembles.

The engine runs a three-stage pipeline over cache-sized blocks of objects:
feature values are quantized to one-byte border counts, quantiles become
per-tree leaf indices through branch-free bit composition, and leaf values
are fetched and summed under one of several lane-parallel strategies,
including a binary16 leaf-precision trade-off.  A scalar traversal oracle,
deviation metrics and a benchmark CLI round out the package.
"""

from .accumulate import (
    Accumulator,
    LeafStrategy,
    accumulate_gather,
    accumulate_naive,
    accumulate_naive16,
    accumulate_permute16,
    accumulate_permute64,
    permute_group_count,
)
from .evaluate import (
    BLOCK_SIZES,
    EvalConfig,
    Evaluator,
    ModelTables,
    TailPlan,
    TailPolicy,
    apply_tail_policy,
    evaluate,
    plan_blocks,
)
from .indexer import LeafIndexVector, compute_leaf_indices, condition_bits
from .model import (
    LeafBank,
    LeafPrecision,
    FloatFeatureBorders,
    ObliviousModel,
    ObliviousTree,
    SplitCondition,
    build_leaf_bank,
    validate_model,
)
from .oracle import (
    DeviationMetrics,
    classification_flip_count,
    deviation_metrics,
    evaluate_scalar,
)
from .quantize import (
    FeatureMatrix,
    Layout,
    QuantizedBlock,
    VectorWidth,
    quantize_block,
    quantize_value,
)
from .serialize import (
    ModelFormatError,
    deserialize_model,
    load_model,
    save_model,
    serialize_model,
)
from .synthetic import SyntheticSpec, Xoshiro256StarStar, generate_feature_matrix, generate_synthetic_model

__version__ = "0.1.0"

__all__ = [
    "Accumulator",
    "BLOCK_SIZES",
    "DeviationMetrics",
    "EvalConfig",
    "Evaluator",
    "FeatureMatrix",
    "FloatFeatureBorders",
    "Layout",
    "LeafBank",
    "LeafIndexVector",
    "LeafPrecision",
    "LeafStrategy",
    "ModelFormatError",
    "ModelTables",
    "ObliviousModel",
    "ObliviousTree",
    "QuantizedBlock",
    "SplitCondition",
    "SyntheticSpec",
    "TailPlan",
    "TailPolicy",
    "VectorWidth",
    "Xoshiro256StarStar",
    "accumulate_gather",
    "accumulate_naive",
    "accumulate_naive16",
    "accumulate_permute16",
    "accumulate_permute64",
    "apply_tail_policy",
    "build_leaf_bank",
    "classification_flip_count",
    "compute_leaf_indices",
    "condition_bits",
    "deserialize_model",
    "deviation_metrics",
    "evaluate",
    "evaluate_scalar",
    "generate_feature_matrix",
    "generate_synthetic_model",
    "load_model",
    "permute_group_count",
    "plan_blocks",
    "quantize_block",
    "quantize_value",
    "save_model",
    "serialize_model",
    "validate_model",
]
