"""Benchmark harness: sweep the configuration matrix, verify, time, report.

Every timed case is first checked against the scalar oracle in the same
process; a timing over wrong results is worthless.  Times are process CPU
time, averaged over repetitions after a warmup run, and each case carries its
relative deviation d = (time - base_time) / base_time against a designated
baseline case.  Absolute times and speedups are hardware facts about the
machine running the bench; they are reported, never asserted.

Run ``obtree-bench --help`` or ``python -m obtree.bench --help`` for usage.
"""

from __future__ import annotations

import argparse
import platform
import re
import statistics
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .accumulate import LeafStrategy
from .evaluate import BLOCK_SIZES, EvalConfig, Evaluator, ModelTables, TailPolicy, plan_blocks, apply_tail_policy
from .model import LeafPrecision, ObliviousModel
from .oracle import evaluate_scalar
from .quantize import FeatureMatrix, Layout, VectorWidth
from .serialize import load_model
from .synthetic import SyntheticSpec, generate_feature_matrix, generate_synthetic_model

# Relative tolerances for oracle verification, per leaf-precision family.
TOL_BINARY64 = 1e-12
TOL_BINARY16 = 1e-6

PRESETS = {
    # Small enough that the full matrix runs in minutes on a laptop core.
    "desk": SyntheticSpec(n_features=500, borders_per_feature=64, n_trees=1000, depth=6, seed=101),
    # The shape of the classification model used for published single-core
    # timings: 2000 features, 64 borders each, 8000 trees of depth 6.
    "epsilon8k64": SyntheticSpec(
        n_features=2000, borders_per_feature=64, n_trees=8000, depth=6, seed=8064
    ),
}

DEFAULT_DATA_SEED = 424242
DEFAULT_REPS = 50

_LAYOUT_SHORT = {Layout.OBJECT_MAJOR: "om", Layout.FEATURE_MAJOR: "fm"}
_TAIL_SHORT = {TailPolicy.SCALAR_TAIL: "st", TailPolicy.PADDED_GROUP: "pg"}


@dataclass(frozen=True)
class BenchCase:
    config: EvalConfig
    layout: Layout
    batch_size: int
    repetitions: int

    def __post_init__(self) -> None:
        if self.repetitions < 3:
            raise ValueError("repetitions must be at least 3")

    @property
    def case_id(self) -> str:
        cfg = self.config
        return (
            f"{cfg.strategy.value}-{cfg.width.value}-b{cfg.block_size}"
            f"-{_LAYOUT_SHORT[self.layout]}-{_TAIL_SHORT[cfg.tail_policy]}-n{self.batch_size}"
        )


@dataclass
class CaseResult:
    case: BenchCase
    verified: bool
    skipped: bool = False
    skip_reason: str = ""
    mean_s: float = float("nan")
    std_s: float = float("nan")
    d: float = float("nan")
    inner: int = 0  # evaluations per timing sample (coarse-clock batching)


@dataclass
class BenchReport:
    baseline_id: str
    rows: list[CaseResult]
    metadata: dict = field(default_factory=dict)

    @property
    def all_verified(self) -> bool:
        return all(r.verified for r in self.rows if not r.skipped)


@dataclass
class SweepRow:
    batch_size: int
    mean_s: float
    std_s: float
    n_blocks: int
    vector_groups: int
    tail_objects: int
    verified: bool


@dataclass
class SweepReport:
    config: EvalConfig
    layout: Layout
    rows: list[SweepRow]
    metadata: dict = field(default_factory=dict)

    @property
    def all_verified(self) -> bool:
        return all(r.verified for r in self.rows)


def _host_metadata() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
    }


def _family_tolerance(config: EvalConfig) -> float:
    if config.strategy.precision is LeafPrecision.BINARY64:
        return TOL_BINARY64
    return TOL_BINARY16


def _verify(preds: np.ndarray, oracle: np.ndarray, tol: float) -> bool:
    scale = np.maximum(np.abs(oracle), np.abs(preds))
    return bool(np.all(np.abs(preds - oracle) <= tol * scale))


# One timing sample must span several ticks of the process CPU clock, which
# can be as coarse as 10 ms; fast cases run several evaluations per sample.
_MIN_SAMPLE_S = 0.05


def _time_case(
    evaluator: Evaluator, matrix: FeatureMatrix, repetitions: int
) -> tuple[float, float, int]:
    inner = 1
    while True:
        t0 = time.process_time()
        for _ in range(inner):
            evaluator.predict(matrix)
        if time.process_time() - t0 >= _MIN_SAMPLE_S:
            break
        inner *= 2
    samples = []
    for _ in range(repetitions):
        t0 = time.process_time()
        for _ in range(inner):
            evaluator.predict(matrix)
        samples.append((time.process_time() - t0) / inner)
    mean = statistics.fmean(samples)
    std = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return mean, std, inner


class _BatchInputs:
    """Per-batch-size input matrices (both layouts share the same values)."""

    def __init__(self, n_features: int, data_seed: int):
        self.n_features = n_features
        self.data_seed = data_seed
        self._matrices: dict[int, dict[Layout, FeatureMatrix]] = {}
        self._oracles: dict[tuple[int, LeafPrecision], np.ndarray] = {}

    def matrix(self, batch_size: int, layout: Layout) -> FeatureMatrix:
        if batch_size not in self._matrices:
            om = generate_feature_matrix(
                batch_size, self.n_features, seed=self.data_seed + batch_size
            )
            self._matrices[batch_size] = {
                Layout.OBJECT_MAJOR: om,
                Layout.FEATURE_MAJOR: om.transposed(),
            }
        return self._matrices[batch_size][layout]

    def oracle(self, model: ObliviousModel, batch_size: int, precision: LeafPrecision) -> np.ndarray:
        key = (batch_size, precision)
        if key not in self._oracles:
            om = self.matrix(batch_size, Layout.OBJECT_MAJOR)
            self._oracles[key] = evaluate_scalar(model, om, precision)
        return self._oracles[key]


def run_matrix(
    model: ObliviousModel,
    cases: list[BenchCase],
    baseline: str | None = None,
    data_seed: int = DEFAULT_DATA_SEED,
    log=None,
) -> BenchReport:
    """Verify and time every case; d is relative to the baseline case."""
    if not cases:
        raise ValueError("no cases to run")
    ids = [c.case_id for c in cases]
    baseline_id = baseline or ids[0]
    if baseline_id not in ids:
        raise ValueError(f"baseline case {baseline_id!r} is not in the matrix")

    tables = ModelTables(model)
    inputs = _BatchInputs(model.n_features, data_seed)
    rows: list[CaseResult] = []

    for case in cases:
        if log:
            log(f"case {case.case_id} ...")
        if not case.config.width.is_supported():
            rows.append(
                CaseResult(case, verified=False, skipped=True, skip_reason="width unsupported")
            )
            continue
        evaluator = Evaluator(tables, case.config)
        matrix = inputs.matrix(case.batch_size, case.layout)
        oracle = inputs.oracle(model, case.batch_size, case.config.strategy.precision)
        preds = evaluator.predict(matrix)  # verification run doubles as warmup
        verified = _verify(preds, oracle, _family_tolerance(case.config))
        result = CaseResult(case, verified=verified)
        if verified:
            result.mean_s, result.std_s, result.inner = _time_case(
                evaluator, matrix, case.repetitions
            )
        rows.append(result)

    # First matching row wins if the id appears more than once.
    base_row = next(r for r in rows if r.case.case_id == baseline_id)
    base_time = base_row.mean_s
    for row in rows:
        if not row.skipped and row.verified and base_time > 0:
            row.d = (row.mean_s - base_time) / base_time

    metadata = _host_metadata()
    metadata.update(
        {
            "n_features": model.n_features,
            "n_trees": model.n_trees,
            "data_seed": data_seed,
            "baseline": baseline_id,
        }
    )
    return BenchReport(baseline_id=baseline_id, rows=rows, metadata=metadata)


def sweep_plan_columns(config: EvalConfig, batch_size: int) -> tuple[int, int, int]:
    """(blocks, vector groups, scalar-tail objects) for one batch size."""
    blocks = plan_blocks(batch_size, config.block_size)
    groups = 0
    tail_objects = 0
    for begin, end in blocks:
        plan = apply_tail_policy(config.tail_policy, config.object_group, end - begin)
        groups += plan.vector_groups
        tail_objects += plan.scalar_remainder
    return len(blocks), groups, tail_objects


def tail_structure_note(report: "SweepReport") -> str | None:
    """Soft observation, never an assertion: with a scalar tail, batch sizes
    that leave a remainder tend to cost at least as much as the next full
    group.  Returns a summary line, or None if the sweep cannot show it."""
    group = report.config.object_group
    if report.config.tail_policy is not TailPolicy.SCALAR_TAIL or group <= 1:
        return None
    by_batch = {r.batch_size: r.mean_s for r in report.rows if r.verified}
    slower = comparable = 0
    for batch, mean_s in by_batch.items():
        if batch % group == 0:
            continue
        rounded = batch + (group - batch % group)
        if rounded in by_batch:
            comparable += 1
            if mean_s >= by_batch[rounded]:
                slower += 1
    if not comparable:
        return None
    return (
        f"tail structure: {slower}/{comparable} non-multiple batch sizes cost at least "
        f"as much as the next multiple of {group}"
    )


def run_batch_sweep(
    model: ObliviousModel,
    config: EvalConfig,
    layout: Layout,
    batch_sizes: list[int],
    repetitions: int = DEFAULT_REPS,
    data_seed: int = DEFAULT_DATA_SEED,
    log=None,
) -> SweepReport:
    """Mean time per batch size for one configuration, plus plan columns."""
    tables = ModelTables(model)
    evaluator = Evaluator(tables, config)
    inputs = _BatchInputs(model.n_features, data_seed)
    tol = _family_tolerance(config)

    rows = []
    for batch in batch_sizes:
        if log:
            log(f"batch {batch} ...")
        matrix = inputs.matrix(batch, layout)
        oracle = inputs.oracle(model, batch, config.strategy.precision)
        preds = evaluator.predict(matrix)
        verified = _verify(preds, oracle, tol)
        mean_s = std_s = float("nan")
        if verified:
            mean_s, std_s, _ = _time_case(evaluator, matrix, repetitions)
        n_blocks, groups, tail_objects = sweep_plan_columns(config, batch)
        rows.append(
            SweepRow(
                batch_size=batch,
                mean_s=mean_s,
                std_s=std_s,
                n_blocks=n_blocks,
                vector_groups=groups,
                tail_objects=tail_objects,
                verified=verified,
            )
        )

    metadata = _host_metadata()
    metadata.update(
        {
            "config": config.describe(),
            "layout": layout.value,
            "repetitions": repetitions,
            "data_seed": data_seed,
        }
    )
    report = SweepReport(config=config, layout=layout, rows=rows, metadata=metadata)
    note = tail_structure_note(report)
    if note:
        report.metadata["note"] = note
    return report


# ----------------------------------------------------------------------------
# Report formatting


def _meta_lines(metadata: dict) -> list[str]:
    return [f"# {key}: {value}" for key, value in metadata.items()]


_MATRIX_COLUMNS = (
    "case_id",
    "strategy",
    "width",
    "block",
    "layout",
    "tail",
    "batch",
    "reps",
    "inner",
    "mean_ms",
    "std_ms",
    "d_vs_baseline",
    "verified",
)


def _matrix_cells(row: CaseResult) -> list[str]:
    case = row.case
    cfg = case.config
    if row.skipped:
        timing = ["", "skipped", "", "", ""]
    elif not row.verified:
        timing = ["", "", "", "", "FAIL"]
    else:
        timing = [
            str(row.inner),
            f"{row.mean_s * 1e3:.3f}",
            f"{row.std_s * 1e3:.3f}",
            f"{row.d * 100:+.1f}%",
            "ok",
        ]
    return [
        case.case_id,
        cfg.strategy.value,
        cfg.width.value,
        str(cfg.block_size),
        case.layout.value,
        cfg.tail_policy.value,
        str(case.batch_size),
        str(case.repetitions),
        *timing,
    ]


def format_matrix_csv(report: BenchReport) -> str:
    lines = _meta_lines(report.metadata)
    lines.append(",".join(_MATRIX_COLUMNS))
    for row in report.rows:
        lines.append(",".join(_matrix_cells(row)))
    return "\n".join(lines) + "\n"


def format_matrix_markdown(report: BenchReport) -> str:
    table = [list(_MATRIX_COLUMNS)] + [_matrix_cells(r) for r in report.rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(_MATRIX_COLUMNS))]
    lines = _meta_lines(report.metadata)
    lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(table[0], widths)) + " |")
    lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    for row in table[1:]:
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"


_SWEEP_COLUMNS = ("batch", "mean_ms", "std_ms", "blocks", "vector_groups", "tail_objects", "verified")


def _sweep_cells(row: SweepRow) -> list[str]:
    return [
        str(row.batch_size),
        f"{row.mean_s * 1e3:.3f}" if row.verified else "",
        f"{row.std_s * 1e3:.3f}" if row.verified else "",
        str(row.n_blocks),
        str(row.vector_groups),
        str(row.tail_objects),
        "ok" if row.verified else "FAIL",
    ]


def format_sweep_csv(report: SweepReport) -> str:
    lines = _meta_lines(report.metadata)
    lines.append(",".join(_SWEEP_COLUMNS))
    for row in report.rows:
        lines.append(",".join(_sweep_cells(row)))
    return "\n".join(lines) + "\n"


def format_sweep_markdown(report: SweepReport) -> str:
    table = [list(_SWEEP_COLUMNS)] + [_sweep_cells(r) for r in report.rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(_SWEEP_COLUMNS))]
    lines = _meta_lines(report.metadata)
    lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(table[0], widths)) + " |")
    lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    for row in table[1:]:
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"


def format_sweep_tsv(report: SweepReport) -> str:
    """Two plot-ready columns: batch size and mean milliseconds."""
    lines = [f"{row.batch_size}\t{row.mean_s * 1e3:.6f}" for row in report.rows]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# CLI


_WIDTH_FLAGS = {
    "scalar": VectorWidth.SCALAR,
    "128": VectorWidth.W128,
    "256": VectorWidth.W256,
    "512": VectorWidth.W512,
}


def _parse_sweep(text: str) -> list[int]:
    match = re.fullmatch(r"(\d+)\.\.(\d+)(?::(\d+))?", text)
    if not match:
        raise argparse.ArgumentTypeError("sweep must look like a..b or a..b:step")
    lo, hi = int(match.group(1)), int(match.group(2))
    step = int(match.group(3) or 1)
    if lo < 1 or hi < lo or step < 1:
        raise argparse.ArgumentTypeError("sweep bounds must satisfy 1 <= a <= b, step >= 1")
    return list(range(lo, hi + 1, step))


def _parse_synthetic(text: str) -> SyntheticSpec:
    parts = text.split(",")
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("expected n_features,borders,trees,depth,seed")
    try:
        f, b, t, d, s = (int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("synthetic spec fields must be integers") from exc
    return SyntheticSpec(n_features=f, borders_per_feature=b, n_trees=t, depth=d, seed=s)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obtree-bench",
        description="Benchmark oblivious-tree ensemble evaluation strategies on one core.",
    )
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--model", metavar="PATH", help="load a serialized model document")
    source.add_argument(
        "--synthetic",
        type=_parse_synthetic,
        metavar="F,B,T,D,SEED",
        help="generate a synthetic model with the given shape",
    )
    source.add_argument(
        "--preset", choices=sorted(PRESETS), help="use a named synthetic model preset"
    )
    parser.add_argument(
        "--layout",
        choices=["object-major", "feature-major", "both"],
        default="both",
        help="input matrix layout(s) to measure (default: both)",
    )
    parser.add_argument(
        "--block",
        choices=[str(b) for b in BLOCK_SIZES] + ["all"],
        default="all",
        help="block size(s) (default: all)",
    )
    parser.add_argument(
        "--strategy",
        choices=[s.value for s in LeafStrategy] + ["all"],
        default="all",
        help="leaf-load strategy(ies) (default: all)",
    )
    parser.add_argument(
        "--width",
        choices=list(_WIDTH_FLAGS) + ["auto", "all"],
        default="auto",
        help="vector width; auto picks the widest supported (default: auto)",
    )
    parser.add_argument(
        "--tail",
        choices=["scalar", "padded"],
        default="scalar",
        help="tail policy for partial object groups (default: scalar)",
    )
    parser.add_argument("--batch", type=int, default=1024, help="batch size (default: 1024)")
    parser.add_argument(
        "--sweep",
        type=_parse_sweep,
        metavar="A..B[:STEP]",
        help="sweep batch sizes instead of running the matrix",
    )
    parser.add_argument("--reps", type=int, default=DEFAULT_REPS, help="timed repetitions per case")
    parser.add_argument("--baseline", metavar="CASE_ID", help="case id d is measured against")
    parser.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    parser.add_argument("--format", choices=["csv", "md", "tsv"], default="md")
    parser.add_argument("--data-seed", type=int, default=DEFAULT_DATA_SEED)
    parser.add_argument("--quiet", action="store_true", help="suppress progress lines")
    return parser


def _resolve_model(args) -> tuple[ObliviousModel, str]:
    if args.model:
        return load_model(args.model), f"file:{args.model}"
    if args.synthetic:
        return generate_synthetic_model(args.synthetic), f"synthetic:{args.synthetic}"
    preset = args.preset or "desk"
    return generate_synthetic_model(PRESETS[preset]), f"preset:{preset}"


def _select_widths(strategy: LeafStrategy, width_flag: str) -> list[VectorWidth]:
    if width_flag == "all":
        return [w for w in VectorWidth if strategy.allows_width(w)]
    if width_flag == "auto":
        return [VectorWidth.widest_supported()]
    return [_WIDTH_FLAGS[width_flag]]


def build_cases(args) -> list[BenchCase]:
    layouts = {
        "object-major": [Layout.OBJECT_MAJOR],
        "feature-major": [Layout.FEATURE_MAJOR],
        "both": [Layout.OBJECT_MAJOR, Layout.FEATURE_MAJOR],
    }[args.layout]
    blocks = list(BLOCK_SIZES) if args.block == "all" else [int(args.block)]
    strategies = (
        list(LeafStrategy) if args.strategy == "all" else [LeafStrategy(args.strategy)]
    )
    tail = TailPolicy.SCALAR_TAIL if args.tail == "scalar" else TailPolicy.PADDED_GROUP

    cases = []
    for layout in layouts:
        for strategy in strategies:
            for width in _select_widths(strategy, args.width):
                if not strategy.allows_width(width):
                    continue
                for block in blocks:
                    config = EvalConfig(
                        block_size=block, width=width, strategy=strategy, tail_policy=tail
                    )
                    cases.append(
                        BenchCase(
                            config=config,
                            layout=layout,
                            batch_size=args.batch,
                            repetitions=args.reps,
                        )
                    )
    return cases


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    if not args.sweep and args.format == "tsv":
        parser.error("tsv output is for --sweep; use csv or md for the matrix")

    try:
        model, source = _resolve_model(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))

    log(f"model: {source} ({model.n_features} features, {model.n_trees} trees)")

    if args.sweep:
        if args.layout == "both":
            if args.format == "tsv":
                parser.error("--sweep with --format tsv needs a single --layout")
            layouts = [Layout.OBJECT_MAJOR, Layout.FEATURE_MAJOR]
        else:
            layouts = [Layout(args.layout)]
        if args.strategy == "all" or args.block == "all" or args.width == "all":
            parser.error("--sweep needs a single --strategy, --block and --width")
        strategy = LeafStrategy(args.strategy)
        width = _select_widths(strategy, args.width)[0]
        if not strategy.allows_width(width):
            parser.error(f"strategy {args.strategy} cannot run at width {args.width}")
        config = EvalConfig(
            block_size=int(args.block),
            width=width,
            strategy=strategy,
            tail_policy=TailPolicy.SCALAR_TAIL if args.tail == "scalar" else TailPolicy.PADDED_GROUP,
        )
        pieces = []
        ok = True
        for layout in layouts:
            report = run_batch_sweep(
                model, config, layout, args.sweep, args.reps, args.data_seed, log=log
            )
            report.metadata["model"] = source
            ok = ok and report.all_verified
            if args.format == "csv":
                pieces.append(format_sweep_csv(report))
            elif args.format == "tsv":
                pieces.append(format_sweep_tsv(report))
            else:
                pieces.append(format_sweep_markdown(report))
        text = "\n".join(pieces)
    else:
        cases = build_cases(args)
        if not cases:
            parser.error("the requested flags produce no valid cases")
        try:
            report = run_matrix(model, cases, args.baseline, args.data_seed, log=log)
        except ValueError as exc:
            parser.error(str(exc))
        report.metadata["model"] = source
        ok = report.all_verified
        text = format_matrix_csv(report) if args.format == "csv" else format_matrix_markdown(report)

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        log(f"report written to {args.out}")
    else:
        print(text, end="")

    if not ok:
        log("ERROR: at least one case failed oracle verification")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
