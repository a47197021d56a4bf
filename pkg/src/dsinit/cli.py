"""Command-line interface.

Subcommands: train, compare, visualize, dump-init. Exit codes: 0 ok,
1 usage or configuration problem, 2 missing or malformed data file,
3 numerical failure (non-finite loss, degenerate statistics).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_config, with_out_dir, with_scheme, with_seed
from .errors import (
    DegenerateDataError,
    FormatError,
    InvalidArgumentError,
    NumericalFailureError,
)
from .experiment import compare_initializers, load_dataset, run_experiment
from .initializers import SCHEMES
from .model_io import load_model
from .network import forward_prefix  # noqa: F401  (re-exported for interactive use)
from .saliency import saliency_map
from .datasets import write_pgm


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsinit",
        description="Train small CNNs under different weight initialization schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training experiment")
    train.add_argument("--config", required=True, help="path to a key = value config file")
    train.add_argument("--init", choices=SCHEMES, help="override the configured init scheme")
    train.add_argument("--seed", type=int, help="override the configured seed")
    train.add_argument("--out-dir", help="override the configured output directory")
    train.set_defaults(func=_cmd_train)

    compare = sub.add_parser("compare", help="train once per init scheme, same data and batches")
    compare.add_argument("--config", required=True)
    compare.add_argument("--inits", required=True, help="comma-separated scheme list, e.g. he,datastats")
    compare.add_argument("--seed", type=int, help="override the configured seed")
    compare.add_argument("--out-dir", help="override the configured output directory")
    compare.set_defaults(func=_cmd_compare)

    visualize = sub.add_parser("visualize", help="write a saliency heatmap for one dataset image")
    visualize.add_argument("--model", required=True, help="path to a saved model")
    visualize.add_argument("--config", required=True, help="config that locates the dataset")
    visualize.add_argument("--dataset-image", type=int, required=True, help="image index")
    visualize.add_argument("--out", required=True, help="output PGM path")
    visualize.set_defaults(func=_cmd_visualize)

    dump = sub.add_parser("dump-init", help="write one layer's initialized filter bank as CSV")
    dump.add_argument("--config", required=True)
    dump.add_argument("--layer", type=int, required=True, help="affine layer number, 1-based")
    dump.add_argument("--init", choices=SCHEMES, help="override the configured init scheme")
    dump.add_argument("--out", required=True, help="output CSV path")
    dump.set_defaults(func=_cmd_dump_init)
    return parser


def _apply_overrides(config, args):
    if getattr(args, "init", None):
        config = with_scheme(config, args.init)
    if getattr(args, "seed", None) is not None:
        config = with_seed(config, args.seed)
    if getattr(args, "out_dir", None):
        config = with_out_dir(config, args.out_dir)
    return config


def _cmd_train(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    metrics = run_experiment(config)
    last = metrics.rows[-1]
    print(
        f"{config.init.scheme}: epoch {last[0]} train_loss {last[1]:.4f} "
        f"val_loss {last[2]:.4f} val_accuracy {last[3]:.4f} -> {config.out_dir}"
    )
    return 0


_ERROR_CODES = (
    (FormatError, 2),  # before InvalidArgumentError: FormatError is also a ValueError
    (NumericalFailureError, 3),
    (DegenerateDataError, 3),
    (InvalidArgumentError, 1),
)


def _cmd_compare(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    schemes = [s.strip() for s in args.inits.split(",") if s.strip()]
    results, errors = compare_initializers(config, schemes)
    for scheme in schemes:
        if scheme in results:
            last = results[scheme].rows[-1]
            print(f"{scheme}: val_accuracy {last[3]:.4f} after {last[0]} epochs")
        else:
            print(f"{scheme}: failed: {errors[scheme]}", file=sys.stderr)
    worst = 0
    for exc in errors.values():
        for err_type, code in _ERROR_CODES:
            if isinstance(exc, err_type):
                worst = max(worst, code)
                break
    return worst


def _cmd_visualize(args) -> int:
    config = load_config(args.config)
    network = load_model(args.model)
    data = load_dataset(config, np.random.default_rng([config.seed, 0]))
    if not 0 <= args.dataset_image < len(data):
        raise InvalidArgumentError(
            f"image index {args.dataset_image} out of range for {len(data)} images"
        )
    heat = saliency_map(network, data.images[args.dataset_image])
    write_pgm(args.out, heat)
    print(f"wrote {args.out}")
    return 0


def _cmd_dump_init(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    from .experiment import prepare_run

    network, _, _, _ = prepare_run(config)
    k = args.layer
    if not 1 <= k <= network.spec.affine_count:
        raise InvalidArgumentError(
            f"layer {k} out of range 1..{network.spec.affine_count}"
        )
    weight = network.weights[k - 1]
    bank = weight.reshape(weight.shape[0], -1)
    with open(args.out, "w", encoding="utf-8") as f:
        for row in bank:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"wrote {args.out} ({bank.shape[0]} filters x {bank.shape[1]} values)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help; fold into the
        # documented 0/1 contract.
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except tuple(t for t, _ in _ERROR_CODES) as exc:
        for err_type, code in _ERROR_CODES:
            if isinstance(exc, err_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise AssertionError("unreachable")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
