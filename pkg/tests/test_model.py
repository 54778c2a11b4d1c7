"""Model types, validation, leaf banks, and the synthetic generator."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from obtree import (
    FloatFeatureBorders,
    LeafPrecision,
    ObliviousModel,
    ObliviousTree,
    SplitCondition,
    SyntheticSpec,
    Xoshiro256StarStar,
    build_leaf_bank,
    generate_synthetic_model,
    serialize_model,
    validate_model,
)
from obtree.model import HALF_MAX


def make_model(borders_lists, trees, scale=1.0, bias=0.0):
    features = tuple(
        FloatFeatureBorders(feature_index=i, borders=np.array(b, dtype=np.float32))
        for i, b in enumerate(borders_lists)
    )
    return ObliviousModel(float_features=features, trees=tuple(trees), scale=scale, bias=bias)


def make_tree(splits, leaves):
    return ObliviousTree(
        depth=len(splits),
        splits=tuple(SplitCondition(f, b) for f, b in splits),
        leaf_values=np.array(leaves, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Independent binary16 reference converter (bit-level, no numpy casts).
# Used as the oracle for bank conversion correctness.

HALF_SUBNORMAL_QUANTUM = Fraction(1, 1 << 24)


def half_bits_reference(x: float) -> int:
    """IEEE binary16 bits for a float, round-to-nearest-even, from scratch."""
    sign = 1 if math.copysign(1.0, x) < 0 else 0
    if math.isnan(x):
        return (sign << 15) | 0x7E00
    if math.isinf(x):
        return (sign << 15) | 0x7C00
    mag = Fraction(abs(x))
    if mag == 0:
        return sign << 15

    exp = 0
    while mag >= 2:
        mag /= 2
        exp += 1
    while mag < 1:
        mag *= 2
        exp -= 1
    mag = Fraction(abs(x))  # restore; exp now satisfies 2**exp <= |x| < 2**(exp+1)

    quantum = Fraction(2) ** (max(exp, -14) - 10)
    steps = mag / quantum
    floor = steps.numerator // steps.denominator
    frac = steps - floor
    if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and floor % 2 == 1):
        floor += 1
    value = floor * quantum

    if value >= 2**16:
        return (sign << 15) | 0x7C00  # overflow rounds to infinity
    if floor >= 2048:  # rounding crossed a binade
        exp += 1
        floor //= 2
    if exp < -14 or floor < 1024:
        return (sign << 15) | floor  # subnormal (or zero after rounding)
    return (sign << 15) | ((exp + 15) << 10) | (floor - 1024)


def saturated_half_bits(x: float) -> int:
    """Reference bank entry: RNE conversion clamped to +/-65504 for finite x."""
    bits = half_bits_reference(x)
    if math.isfinite(x) and bits & 0x7FFF == 0x7C00:
        return (bits & 0x8000) | 0x7BFF
    return bits


class TestHalfReference:
    """Sanity-check the reference converter against numpy's conversion."""

    @pytest.mark.parametrize(
        "value,bits",
        [
            (0.0, 0x0000),
            (-0.0, 0x8000),
            (1.0, 0x3C00),
            (-2.0, 0xC000),
            (65504.0, 0x7BFF),
            (2.0**-24, 0x0001),
            (2.0**-25, 0x0000),   # ties to even: rounds to zero
            (1024.5, 0x6400),     # tie at 1 ulp, even mantissa wins
            (float("inf"), 0x7C00),
        ],
    )
    def test_known_bit_patterns(self, value, bits):
        assert half_bits_reference(value) == bits

    def test_matches_numpy_on_random_values(self):
        rng = np.random.default_rng(7)
        exponents = rng.uniform(-30, 18, size=4000)
        values = np.sign(rng.standard_normal(4000)) * 2.0**exponents
        for v in values:
            expected = half_bits_reference(float(v))
            with np.errstate(over="ignore"):
                got = int(np.float16(v).view(np.uint16))
            assert got == expected, v


# ---------------------------------------------------------------------------
# validate_model


class TestValidation:
    def test_duplicate_borders_rejected(self):
        model = make_model([[1.0, 1.0]], [])
        errors = validate_model(model)
        assert any("non-ascending borders" in e for e in errors)

    def test_descending_borders_rejected(self):
        errors = validate_model(make_model([[2.0, 1.0]], []))
        assert any("non-ascending borders" in e for e in errors)

    def test_empty_ensemble_is_legal(self):
        assert validate_model(make_model([[0.5]], [])) == []

    def test_border_ordinal_one_past_end(self):
        tree = make_tree([(0, 1)], [0.0, 1.0])
        errors = validate_model(make_model([[0.5]], [tree]))
        assert any("border ordinal out of range" in e for e in errors)

    def test_split_feature_out_of_range(self):
        tree = make_tree([(3, 0)], [0.0, 1.0])
        errors = validate_model(make_model([[0.5]], [tree]))
        assert any("feature index 3 out of range" in e for e in errors)

    def test_no_features_rejected(self):
        errors = validate_model(make_model([], []))
        assert any("at least one float feature" in e for e in errors)

    def test_nan_border_rejected(self):
        errors = validate_model(make_model([[np.nan]], []))
        assert any("NaN border" in e for e in errors)

    def test_nan_leaf_rejected(self):
        tree = make_tree([(0, 0)], [np.nan, 1.0])
        errors = validate_model(make_model([[0.5]], [tree]))
        assert any("NaN leaf" in e for e in errors)

    def test_leaf_count_must_match_depth(self):
        tree = ObliviousTree(
            depth=2,
            splits=(SplitCondition(0, 0), SplitCondition(0, 0)),
            leaf_values=np.array([1.0, 2.0, 3.0]),
        )
        errors = validate_model(make_model([[0.5]], [tree]))
        assert any("3 leaf values, expected 4" in e for e in errors)

    def test_too_many_borders(self):
        errors = validate_model(make_model([np.linspace(0, 1, 255, dtype=np.float32)], []))
        assert any("exceed the limit of 254" in e for e in errors)

    def test_depth_out_of_bounds(self):
        tree = ObliviousTree(depth=9, splits=tuple(SplitCondition(0, 0) for _ in range(9)),
                             leaf_values=np.zeros(512))
        errors = validate_model(make_model([[0.5]], [tree]))
        assert any("depth 9" in e for e in errors)

    def test_valid_model_has_no_errors(self):
        tree = make_tree([(0, 0), (1, 2)], [0.0, 1.0, 2.0, 3.0])
        assert validate_model(make_model([[0.5], [0.1, 0.2, 0.3]], [tree])) == []


# ---------------------------------------------------------------------------
# build_leaf_bank


class TestLeafBank:
    def test_binary16_exact_value(self):
        tree = make_tree([(0, 0)], [1.0, 1.0])
        bank = build_leaf_bank(make_model([[0.5]], [tree]), LeafPrecision.BINARY16)
        assert bank.table(0)[0] == np.float16(1.0)
        assert bank.saturation_count == 0

    def test_binary16_saturates_with_warning(self):
        tree = make_tree([(0, 0)], [70000.0, -70000.0])
        bank = build_leaf_bank(make_model([[0.5]], [tree]), LeafPrecision.BINARY16)
        assert bank.table(0)[0] == np.float16(HALF_MAX)
        assert bank.table(0)[1] == np.float16(-HALF_MAX)
        assert bank.saturation_count == 2

    def test_binary16_nearest_within_half_ulp(self):
        tree = make_tree([(0, 0)], [0.1, 0.2])
        bank = build_leaf_bank(make_model([[0.5]], [tree]), LeafPrecision.BINARY16)
        stored = float(bank.table(0)[0])
        assert int(bank.table(0)[0].view(np.uint16)) == half_bits_reference(0.1)
        assert abs(stored - 0.1) <= 0.1 * 2.0**-11

    def test_binary16_matches_reference_converter(self):
        spec = SyntheticSpec(n_features=4, borders_per_feature=8, n_trees=12, depth=4, seed=55)
        model = generate_synthetic_model(spec)
        bank = build_leaf_bank(model, LeafPrecision.BINARY16)
        for t, tree in enumerate(model.trees):
            got = bank.table(t)[: tree.leaf_values.size].view(np.uint16)
            expected = [saturated_half_bits(float(v)) for v in tree.leaf_values]
            assert list(got) == expected

    def test_binary16_error_bound_over_random_models(self):
        for seed in range(5):
            spec = SyntheticSpec(n_features=3, borders_per_feature=4, n_trees=8, depth=3, seed=seed)
            model = generate_synthetic_model(spec)
            bank = build_leaf_bank(model, LeafPrecision.BINARY16)
            for t, tree in enumerate(model.trees):
                widened = bank.table(t)[: tree.leaf_values.size].astype(np.float64)
                clamped = np.clip(tree.leaf_values, -HALF_MAX, HALF_MAX)
                bound = np.maximum(np.abs(tree.leaf_values) * 2.0**-11, 2.0**-24)
                assert np.all(np.abs(widened - clamped) <= bound)

    def test_binary64_bank_is_bit_exact(self):
        tree = make_tree([(0, 0), (0, 0)], [0.1, -2.5e300, 3e-300, 7.0])
        bank = build_leaf_bank(make_model([[0.5]], [tree]), LeafPrecision.BINARY64)
        assert bank.table(0)[:4].tobytes() == tree.leaf_values.tobytes()

    def test_alignment_and_padding(self):
        trees = [make_tree([(0, 0)], [1.0, 2.0]) for _ in range(5)]
        for precision in LeafPrecision:
            bank = build_leaf_bank(make_model([[0.5]], trees), precision)
            itemsize = bank.values.dtype.itemsize
            assert bank.values.ctypes.data % 64 == 0
            for t in range(5):
                assert (int(bank.offsets[t]) * itemsize) % 64 == 0
                table = bank.table(t)
                assert table.size * itemsize % 64 == 0
                assert np.all(table[2:] == 0)  # padding beyond the 2 live leaves

    def test_max_abs_leaf(self):
        trees = [make_tree([(0, 0)], [1.0, -9.5]), make_tree([(0, 0)], [3.0, 2.0])]
        bank = build_leaf_bank(make_model([[0.5]], trees), LeafPrecision.BINARY64)
        assert bank.max_abs_leaf == 9.5

    def test_invalid_model_rejected(self):
        with pytest.raises(ValueError, match="invalid model"):
            build_leaf_bank(make_model([[1.0, 1.0]], []), LeafPrecision.BINARY64)


# ---------------------------------------------------------------------------
# PRNG and generator


class TestXoshiro:
    def test_first_outputs_from_known_state(self):
        # Hand-derived from the xoshiro256** update rule with state (1, 2, 3, 4):
        # out1 = rotl(2*5, 7) * 9 = 1280 * 9; s1 then becomes 0, so out2 = 0.
        rng = Xoshiro256StarStar(0)
        rng._s = [1, 2, 3, 4]
        assert rng.next_u64() == 11520
        assert rng.next_u64() == 0

    def test_same_seed_same_stream(self):
        a = Xoshiro256StarStar(99)
        b = Xoshiro256StarStar(99)
        assert [a.next_u64() for _ in range(20)] == [b.next_u64() for _ in range(20)]

    def test_unit_range(self):
        rng = Xoshiro256StarStar(5)
        values = [rng.unit() for _ in range(1000)]
        assert all(0.0 <= v < 1.0 for v in values)

    def test_below_range(self):
        rng = Xoshiro256StarStar(5)
        assert all(0 <= rng.below(7) < 7 for _ in range(1000))


class TestGenerator:
    def test_determinism_bytes(self):
        spec = SyntheticSpec(n_features=5, borders_per_feature=9, n_trees=11, depth=3, seed=42)
        a = serialize_model(generate_synthetic_model(spec))
        b = serialize_model(generate_synthetic_model(spec))
        assert a == b

    def test_minimal_shape(self):
        model = generate_synthetic_model(SyntheticSpec(1, 1, 1, 1, seed=0))
        assert model.n_features == 1
        assert model.trees[0].leaf_values.size == 2
        assert validate_model(model) == []

    def test_reference_benchmark_shape(self):
        # The published benchmark model shape: 2000 float features with 64
        # borders each, 8000 trees of depth 6.
        spec = SyntheticSpec(n_features=2000, borders_per_feature=64, n_trees=8000, depth=6, seed=1)
        model = generate_synthetic_model(spec)
        assert model.n_features == 2000
        assert all(ff.borders.size == 64 for ff in model.float_features)
        assert model.n_trees == 8000
        assert all(t.depth == 6 for t in model.trees)

    def test_every_output_validates(self):
        rng = Xoshiro256StarStar(777)
        for i in range(25):
            spec = SyntheticSpec(
                n_features=1 + rng.below(20),
                borders_per_feature=1 + rng.below(40),
                n_trees=rng.below(30),
                depth=1 + rng.below(8),
                seed=i,
            )
            assert validate_model(generate_synthetic_model(spec)) == []

    @pytest.mark.parametrize(
        "spec",
        [
            SyntheticSpec(0, 1, 1, 1, 0),
            SyntheticSpec(1, 0, 1, 1, 0),
            SyntheticSpec(1, 255, 1, 1, 0),
            SyntheticSpec(1, 1, -1, 1, 0),
            SyntheticSpec(1, 1, 1, 0, 0),
            SyntheticSpec(1, 1, 1, 9, 0),
        ],
    )
    def test_out_of_range_parameters(self, spec):
        with pytest.raises(ValueError):
            generate_synthetic_model(spec)


class TestImmutability:
    def test_model_payloads_are_read_only(self):
        model = generate_synthetic_model(SyntheticSpec(2, 3, 2, 2, seed=1))
        with pytest.raises(ValueError):
            model.float_features[0].borders[0] = 0.0
        with pytest.raises(ValueError):
            model.trees[0].leaf_values[0] = 0.0

    def test_bank_values_are_read_only(self):
        model = generate_synthetic_model(SyntheticSpec(2, 3, 2, 2, seed=1))
        bank = build_leaf_bank(model, LeafPrecision.BINARY64)
        with pytest.raises(ValueError):
            bank.values[0] = 1.0
