"""End-to-end command-line workflow.

Subcommands: gen, fit, score, eval, split, ablate, sweep. All outputs are
CSV (diffable, byte-stable for fixed seeds); files are written atomically
via temp + rename. Exit codes: 0 success, 2 usage error, 3 data/format
error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .activations import (
    BenchmarkConfig,
    DatasetRole,
    OOD_KINDS,
    generate_synthetic_benchmark,
    open_dataset,
    read_activations,
    read_header,
    split_indices,
    split_validation,
)
from .errors import DataError, NumericError
from .gram import DEFAULT_ORDERS, StatVariant, normalize_orders
from .metrics import EVAL_HEADER, evaluate, format_eval_row
from .scoring import (
    Aggregation,
    layer_deviations_from_matrix,
    normalizer_from_layer_deviations,
    score_stream,
    total_deviations,
)
from .tables import (
    METRIC_MEANVAR,
    METRIC_MINMAX,
    _fit,
    fit_bounds,
    fit_moments,
    load_table,
    save_table,
)

_VARIANTS = {v.value: v for v in StatVariant}
_METRICS = {"minmax": METRIC_MINMAX, "gaussian": METRIC_MEANVAR}
_AGGS = {a.value: a for a in Aggregation}


@dataclass(frozen=True)
class RunConfig:
    """One experiment configuration: detector axes plus the repetition seeds."""

    variant: StatVariant
    metric: str
    aggregation: Aggregation
    orders: tuple[int, ...]
    seeds: tuple[int, ...]
    layer_groups: tuple[tuple[str, tuple[int, ...]], ...] | None = None
    validation_fraction: float = 0.10

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one repetition seed")

    @property
    def repetitions(self) -> int:
        return len(self.seeds)

ABLATE_HEADER = (
    "variant,metric,aggregation,headline,train_zero,"
    "tnr_mean,tnr_std,auroc_mean,auroc_std,dtacc_mean,dtacc_std"
)
SWEEP_HEADER = "axis,slice,tnr_mean,tnr_std"


def parse_int_list(text: str) -> tuple[int, ...]:
    """Parse "1-10" / "1,2,4" / "1-3,7" into a sorted tuple of ints."""
    out: set[int] = set()
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token:
            lo, hi = token.split("-", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"empty range {token!r}")
            out.update(range(lo_i, hi_i + 1))
        else:
            out.add(int(token))
    if not out:
        raise ValueError(f"no values in {text!r}")
    return tuple(sorted(out))


def parse_orders(text: str) -> tuple[int, ...]:
    return normalize_orders(parse_int_list(text))


def parse_layer_shapes(text: str) -> tuple[tuple[int, int], ...]:
    """Parse "8x32,16x16" into ((8, 32), (16, 16))."""
    shapes = []
    for token in text.split(","):
        ch, px = token.lower().split("x")
        shapes.append((int(ch), int(px)))
    if not shapes:
        raise ValueError(f"no layer shapes in {text!r}")
    return tuple(shapes)


def parse_groups(text: str) -> tuple[tuple[str, tuple[int, ...]], ...]:
    """Parse "low=0,1;high=2,3" into named layer groups."""
    groups = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        name, _, idx = part.partition("=")
        if not idx:
            raise ValueError(f"group {part!r} must look like name=0,1")
        groups.append((name.strip(), parse_int_list(idx)))
    if not groups:
        raise ValueError(f"no groups in {text!r}")
    return tuple(groups)


def _write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    with open(tmp, "w", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def format_scores_csv(classes: np.ndarray, layer_devs: np.ndarray, totals: np.ndarray) -> str:
    num_layers = layer_devs.shape[1]
    header = "record_index,predicted_class,delta_total," + ",".join(
        f"delta_layer_{l}" for l in range(num_layers)
    )
    lines = [header]
    for i in range(classes.shape[0]):
        layer_part = ",".join(f"{x:.17g}" for x in layer_devs[i])
        lines.append(f"{i},{classes[i]},{totals[i]:.17g},{layer_part}")
    return "\n".join(lines) + "\n"


def parse_scores_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a scores CSV back into (classes, totals, layer_devs)."""
    with open(path, "r") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty scores file")
    fields = lines[0].split(",")
    expected_prefix = ["record_index", "predicted_class", "delta_total"]
    if fields[:3] != expected_prefix or any(
        fields[3 + l] != f"delta_layer_{l}" for l in range(len(fields) - 3)
    ):
        raise DataError(f"{path}: unexpected scores header {lines[0]!r}")
    classes, totals, layers = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(fields):
            raise DataError(f"{path}:{ln}: expected {len(fields)} columns, got {len(parts)}")
        try:
            classes.append(int(parts[1]))
            totals.append(float(parts[2]))
            layers.append([float(x) for x in parts[3:]])
        except ValueError as e:
            raise DataError(f"{path}:{ln}: {e}")
    if not classes:
        raise DataError(f"{path}: no score rows")
    return (
        np.asarray(classes, dtype=np.int64),
        np.asarray(totals, dtype=np.float64),
        np.asarray(layers, dtype=np.float64),
    )


def cmd_gen(args) -> int:
    config = BenchmarkConfig(
        num_classes=args.classes,
        layer_shapes=args.layers,
        train_per_class=args.per_class,
        test_per_class=args.test_per_class,
        ood_count=args.ood_count,
        ood_kind=args.ood_kind,
        seed=args.seed,
    )
    paths = generate_synthetic_benchmark(config, args.out_dir)
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0


def cmd_fit(args) -> int:
    header = read_header(args.train)
    fitter = fit_bounds if args.metric == "minmax" else fit_moments
    table = fitter(read_activations(args.train), header.num_classes, args.orders, args.stat)
    save_table(table, args.out)
    for c in range(header.num_classes):
        print(f"class {c}: {int(table.counts[c])} records")
    print(f"table: {args.out}")
    return 0


def cmd_score(args) -> int:
    table = load_table(args.table)
    mode = _AGGS[args.agg]
    normalizer = None
    if mode is Aggregation.NORMALIZED:
        if args.va is None:
            print("error: normalized scoring requires --va", file=sys.stderr)
            return 2
        _, va_devs = score_stream(read_activations(args.va), table)
        normalizer = normalizer_from_layer_deviations(layer_deviations_from_matrix(va_devs))
    elif args.va is not None:
        print("warning: --va is unused in unnormalized mode", file=sys.stderr)
    classes, devs = score_stream(read_activations(args.data), table)
    layer_devs = layer_deviations_from_matrix(devs)
    totals = total_deviations(layer_devs, normalizer, mode)
    _write_text(args.out, format_scores_csv(classes, layer_devs, totals))
    print(f"scores: {args.out} ({classes.shape[0]} records)")
    return 0


def cmd_eval(args) -> int:
    _, id_totals, _ = parse_scores_csv(args.id_scores)
    _, ood_totals, _ = parse_scores_csv(args.ood_scores)
    result = evaluate(id_totals, ood_totals)
    text = EVAL_HEADER + "\n" + format_eval_row(result) + "\n"
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_split(args) -> int:
    handle = open_dataset(args.data, DatasetRole.ID_TEST)
    va, rest = split_validation(
        handle, fraction=args.fraction, seed=args.seed,
        va_path=args.out_va, rest_path=args.out_rest,
    )
    print(f"validation: {va.path} ({va.header.record_count} records)")
    print(f"remaining: {rest.path} ({rest.header.record_count} records)")
    return 0


def _percent(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _seed_metrics(id_layer: np.ndarray, ood_layer: np.ndarray, config: RunConfig):
    """Per-seed evaluation re-drawing only the validation split."""
    results = []
    n = id_layer.shape[0]
    for seed in config.seeds:
        va_idx, rest_idx = split_indices(n, config.validation_fraction, seed)
        normalizer = None
        if config.aggregation is Aggregation.NORMALIZED:
            normalizer = normalizer_from_layer_deviations(id_layer[va_idx])
        id_tot = total_deviations(id_layer[rest_idx], normalizer, config.aggregation)
        ood_tot = total_deviations(ood_layer, normalizer, config.aggregation)
        results.append(evaluate(id_tot, ood_tot))
    return results


def cmd_ablate(args) -> int:
    header = read_header(args.train)
    num_classes = header.num_classes
    variants = (StatVariant.DIAGONAL, StatVariant.OFF_DIAGONAL_ROW_SUMS, StatVariant.FULL_ROW_SUMS)
    lines = [ABLATE_HEADER]
    for variant in variants:
        bounds, moments = _fit(
            read_activations(args.train), num_classes, args.orders, variant,
            (METRIC_MINMAX, METRIC_MEANVAR),
        )
        _, train_devs = score_stream(read_activations(args.train), bounds)
        train_zero = "pass" if float(np.abs(train_devs).max()) == 0.0 else "fail"
        for metric_name, table in (("minmax", bounds), ("gaussian", moments)):
            _, id_devs = score_stream(read_activations(args.id_test), table)
            _, ood_devs = score_stream(read_activations(args.ood_test), table)
            id_layer = layer_deviations_from_matrix(id_devs)
            ood_layer = layer_deviations_from_matrix(ood_devs)
            for agg in (Aggregation.NORMALIZED, Aggregation.UNNORMALIZED):
                config = RunConfig(variant=variant, metric=metric_name, aggregation=agg,
                                   orders=args.orders, seeds=args.seeds)
                results = _seed_metrics(id_layer, ood_layer, config)
                tnr = np.array([r.tnr_at_95tpr for r in results])
                auc = np.array([r.auroc for r in results])
                acc = np.array([r.detection_accuracy for r in results])
                headline = (
                    "yes"
                    if (variant, metric_name, agg)
                    == (StatVariant.FULL_ROW_SUMS, "minmax", Aggregation.NORMALIZED)
                    else "no"
                )
                lines.append(
                    f"{variant.value},{metric_name},{agg.value},{headline},"
                    f"{train_zero if metric_name == 'minmax' else 'na'},"
                    f"{_percent(tnr.mean())},{_percent(tnr.std())},"
                    f"{_percent(auc.mean())},{_percent(auc.std())},"
                    f"{_percent(acc.mean())},{_percent(acc.std())}"
                )
    text = "\n".join(lines) + "\n"
    _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    config = RunConfig(variant=args.stat, metric=args.metric, aggregation=_AGGS[args.agg],
                       orders=args.orders, seeds=args.seeds, layer_groups=args.groups)
    header = read_header(args.train)
    fitter = fit_bounds if config.metric == "minmax" else fit_moments
    table = fitter(read_activations(args.train), header.num_classes, config.orders, config.variant)
    _, id_devs = score_stream(read_activations(args.id_test), table)
    _, ood_devs = score_stream(read_activations(args.ood_test), table)
    num_layers = table.spec.num_layers

    slices: list[tuple[str, np.ndarray, np.ndarray]] = []
    if args.axis == "order":
        for k, p in enumerate(table.spec.orders):
            order_mask = np.zeros(table.spec.num_orders, dtype=bool)
            order_mask[k] = True
            slices.append((str(p), order_mask, np.arange(num_layers)))
    else:
        groups = config.layer_groups or tuple(
            (f"layer{l}", (l,)) for l in range(num_layers)
        )
        for name, idx in groups:
            layer_idx = np.asarray(idx, dtype=np.int64)
            if layer_idx.min() < 0 or layer_idx.max() >= num_layers:
                raise DataError(f"group {name!r} references layers outside [0, {num_layers})")
            slices.append((name, None, layer_idx))

    lines = [SWEEP_HEADER]
    for name, order_mask, layer_idx in slices:
        id_layer = layer_deviations_from_matrix(id_devs, order_mask)[:, layer_idx]
        ood_layer = layer_deviations_from_matrix(ood_devs, order_mask)[:, layer_idx]
        results = _seed_metrics(id_layer, ood_layer, config)
        tnr = np.array([r.tnr_at_95tpr for r in results])
        lines.append(f"{args.axis},{name},{_percent(tnr.mean())},{_percent(tnr.std())}")
    text = "\n".join(lines) + "\n"
    _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gramdet",
        description="Class-conditional Gram-matrix bounds for OOD detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic activation benchmark")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--layers", type=parse_layer_shapes, default=((8, 32), (16, 16), (12, 24)),
                   help="comma list of CxP shapes, e.g. 8x32,16x16")
    p.add_argument("--per-class", type=int, default=100, help="train records per class")
    p.add_argument("--test-per-class", type=int, default=30)
    p.add_argument("--ood-count", type=int, default=300)
    p.add_argument("--ood-kind", choices=OOD_KINDS, default="rademacher")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit a class-conditional table from a train file")
    p.add_argument("train")
    p.add_argument("--stat", choices=sorted(_VARIANTS), default="rowsum", type=str)
    p.add_argument("--metric", choices=sorted(_METRICS), default="minmax")
    p.add_argument("--orders", type=parse_orders, default=DEFAULT_ORDERS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score records against a fitted table")
    p.add_argument("table")
    p.add_argument("data")
    p.add_argument("--va", default=None, help="validation GACT file for the normalizer")
    p.add_argument("--agg", choices=sorted(_AGGS), default="norm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="detection metrics from two scores CSVs")
    p.add_argument("id_scores")
    p.add_argument("ood_scores")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("split", help="split a GACT file into validation + rest")
    p.add_argument("data")
    p.add_argument("--fraction", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-va", default=None)
    p.add_argument("--out-rest", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("ablate", help="12-configuration ablation grid")
    p.add_argument("train")
    p.add_argument("id_test")
    p.add_argument("ood_test")
    p.add_argument("--orders", type=parse_orders, default=DEFAULT_ORDERS)
    p.add_argument("--seeds", type=parse_int_list, default=tuple(range(10)))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="TNR per single order or per layer group")
    p.add_argument("train")
    p.add_argument("id_test")
    p.add_argument("ood_test")
    p.add_argument("--axis", choices=("order", "layer"), required=True)
    p.add_argument("--groups", type=parse_groups, default=None,
                   help='layer groups for --axis layer, e.g. "low=0,1;high=2,3"')
    p.add_argument("--orders", type=parse_orders, default=DEFAULT_ORDERS)
    p.add_argument("--seeds", type=parse_int_list, default=tuple(range(10)))
    p.add_argument("--stat", choices=sorted(_VARIANTS), default="rowsum")
    p.add_argument("--metric", choices=sorted(_METRICS), default="minmax")
    p.add_argument("--agg", choices=sorted(_AGGS), default="norm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "stat"):
        args.stat = _VARIANTS[args.stat]
    try:
        return args.func(args)
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    raise SystemExit(main())
