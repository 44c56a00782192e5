"""Export CLI: train an MNIST MLP and dump GACT files for the engine.

    gramdet-export export --arch 300 --id-train mnist --id-test mnist \
        --ood fashion-mnist,kmnist --out dumps/

Writes train.gact, id_test.gact and one ood_<name>.gact per OOD dataset.
Checkpoints are cached in the output directory, keyed by arch and seed.
Exit codes: 0 success, 2 usage error, 3 dataset missing or unreadable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .datasets import DATASETS, DatasetMissingError, load
from .export import export_activations
from .models import ARCHS
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_mlp

ACCURACY_FLOOR = 0.97


def cmd_export(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / f"mlp{args.arch}_seed{args.seed}.pt"
    if checkpoint.exists() and not args.retrain:
        model, accuracy = load_checkpoint(checkpoint)
        print(f"loaded {checkpoint} (test accuracy {accuracy:.4f})")
    else:
        config = TrainConfig(epochs=args.epochs)
        model, accuracy = train_mlp(args.arch, args.seed, args.data_root, config)
        save_checkpoint(model, accuracy, args.arch, args.seed, checkpoint)
        print(f"trained mlp-{args.arch} seed {args.seed}: test accuracy {accuracy:.4f}")
    if accuracy < ACCURACY_FLOOR:
        print(f"error: test accuracy {accuracy:.4f} below sanity floor {ACCURACY_FLOOR}",
              file=sys.stderr)
        return 3

    jobs = [("train.gact", args.id_train, "train"), ("id_test.gact", args.id_test, "test")]
    for name in args.ood:
        jobs.append((f"ood_{name}.gact", name, "test"))
    for filename, dataset_name, split in jobs:
        dataset = load(dataset_name, split, args.data_root)
        count = export_activations(model, dataset, out / filename)
        print(f"{out / filename}: {count} records")
    return 0


def _ood_list(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    for name in names:
        if name not in DATASETS:
            raise ValueError(f"unknown dataset {name!r}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramdet-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="train (or load) an MLP and export activations")
    p.add_argument("--arch", choices=sorted(ARCHS), required=True)
    p.add_argument("--id-train", choices=sorted(DATASETS), default="mnist")
    p.add_argument("--id-test", choices=sorted(DATASETS), default="mnist")
    p.add_argument("--ood", type=_ood_list, default=("fashion-mnist", "kmnist"),
                   help="comma-separated OOD dataset names")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--data-root", default="data")
    p.add_argument("--retrain", action="store_true", help="ignore a cached checkpoint")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetMissingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    raise SystemExit(main())
