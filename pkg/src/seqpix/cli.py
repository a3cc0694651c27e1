"""Command-line interface.

Subcommands: ingest, train, eval, compress, decompress, sample, filters,
bench. Every run is deterministic given --seed (default 1); the data
directory defaults to $SEQPIX_DATA_DIR, then ./data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import codec, serialization
from .datasets import load_dataset
from .exceptions import SeqpixError
from .model import SequentialPixelModel
from .pgm import tile_grid, write_pgm

DEFAULT_SEED = 1

_TRAIN_KEYS = {
    "n_hidden": int,
    "variant": str,
    "permutation": str,
    "eta0": float,
    "t0": float,
    "l2_lambda": float,
    "max_iterations": int,
    "eval_every": int,
    "patience": int,
    "validation_fraction": float,
    "subtract_mean": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "hidden_mode": str,
    "l2_on_biases": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "random_state": int,
}


def read_train_config(path) -> dict:
    """Parse a 'key = value' text file of training settings."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SeqpixError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TRAIN_KEYS:
            raise SeqpixError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = _TRAIN_KEYS[key](value)
    return out


def _default_data_dir() -> str:
    return os.environ.get("SEQPIX_DATA_DIR", "data")


def _add_dataset_args(p: argparse.ArgumentParser):
    p.add_argument("--dataset", choices=("mnist", "usps"), required=True)
    p.add_argument("--data-dir", default=None, help="defaults to $SEQPIX_DATA_DIR, then ./data")


def _load(args):
    data_dir = args.data_dir or _default_data_dir()
    return load_dataset(args.dataset, data_dir, seed=args.seed)


def _split_images(dataset, split: str):
    part = dataset.train if split == "train" else dataset.test
    return part.as_images()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqpix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw files, binarize, split, save npz + stats")
    _add_dataset_args(p)
    p.add_argument("--out", default=None, help="output npz path")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the autoregressive model, write model + curve")
    _add_dataset_args(p)
    p.add_argument("--hidden", type=int, default=None, help="hidden units (default 200)")
    p.add_argument("--variant", choices=("r_only", "uv_only", "full"), default=None)
    p.add_argument("--perm", choices=("per_iter", "fixed", "raster"), default=None)
    p.add_argument("--l2", type=float, default=None)
    p.add_argument("--eta0", type=float, default=None)
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--config", default=None, help="key = value settings file; explicit flags win")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean bits/image of a model on a split")
    _add_dataset_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compress", help="arithmetic-code a split into a container file")
    _add_dataset_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--limit", type=int, default=None, help="only the first N images")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="container path")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="recover images from a container file")
    p.add_argument("--model", required=True)
    p.add_argument("--container", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="npz path for the recovered images")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("sample", help="draw digits from a model into a PGM grid")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("filters", help="export learned weight filters as a PGM grid")
    p.add_argument("--model", required=True)
    p.add_argument("--which", choices=("u", "v", "r"), default="u")
    p.add_argument("--max-filters", type=int, default=100)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filters)

    p = sub.add_parser("bench", help="reproduce the method-comparison table")
    _add_dataset_args(p)
    p.add_argument("--methods", nargs="+", default=list(codec.DEFAULT_METHODS))
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--code-limit", type=int, default=256,
                   help="images run through the actual coder per method")
    p.add_argument("--train-budget", type=int, default=None,
                   help="override max SGD iterations for neural rows")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default="out", help="directory for table.txt/table.csv and model cache")
    p.set_defaults(func=cmd_bench)

    return parser


def cmd_ingest(args) -> int:
    dataset = _load(args)
    out = Path(args.out) if args.out else Path(args.data_dir or _default_data_dir()) / f"{args.dataset}.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        out,
        train_pixels=dataset.train.pixels,
        train_labels=dataset.train.labels,
        test_pixels=dataset.test.pixels,
        test_labels=dataset.test.labels,
        mean_image=dataset.mean_image,
        width=dataset.train.width,
        height=dataset.train.height,
    )
    ones = dataset.train.pixels.mean()
    print(f"{args.dataset}: {len(dataset.train)} train / {len(dataset.test)} test images, "
          f"{dataset.train.width}x{dataset.train.height}, train ones fraction {ones:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    dataset = _load(args)
    perm_names = {"per_iter": "per_iteration_random", "fixed": "fixed_random", "raster": "raster"}
    params = {"random_state": args.seed}
    if args.config:
        params.update(read_train_config(args.config))
    flag_params = dict(
        n_hidden=args.hidden,
        variant=args.variant,
        permutation=perm_names[args.perm] if args.perm else None,
        eta0=args.eta0,
        t0=args.t0,
        l2_lambda=args.l2,
        max_iterations=args.max_iterations,
        eval_every=args.eval_every,
        patience=args.patience,
    )
    params.update({k: v for k, v in flag_params.items() if v is not None})
    model = SequentialPixelModel(**params)
    model.fit(dataset.train.as_images())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.dataset}_{model.variant}_{model.n_hidden}"
    model_path = serialization.save_model(model, out / f"{stem}.sppm")
    curve_path = out / f"{stem}.curve.jsonl"
    with curve_path.open("w") as fh:
        for point in model.report_.curve:
            fh.write(json.dumps({"iteration": point.iteration,
                                 "train_bits": point.train_bits,
                                 "val_bits": point.val_bits}) + "\n")
    test_bits = model.mean_bits(dataset.test.as_images())
    print(f"trained {stem}: {model.report_.iterations_run} iterations, "
          f"best val {model.report_.best_val_bits:.2f} bits at {model.report_.best_iteration}")
    print(f"test set: {test_bits:.2f} bits/image")
    print(f"wrote {model_path} and {curve_path}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load(args)
    model = serialization.load_model(args.model)
    bits = model.mean_bits(_split_images(dataset, args.split))
    print(f"{args.model} on {args.dataset} {args.split}: {bits:.3f} bits/image")
    return 0


def cmd_compress(args) -> int:
    dataset = _load(args)
    model = serialization.load_model(args.model)
    images = _split_images(dataset, args.split)
    if args.limit is not None:
        images = images[: args.limit]
    container = codec.compress_dataset(model, images)
    container.save(args.out)
    stored = container.payload_bits()
    mean_bits = float(stored.mean()) if len(container) else 0.0
    print(f"compressed {len(container)} images to {args.out}: "
          f"{mean_bits:.1f} payload bits/image")
    return 0


def cmd_decompress(args) -> int:
    model = serialization.load_model(args.model)
    container = codec.CodecContainer.load(args.container)
    images = codec.decompress_dataset(container, model)
    np.savez_compressed(args.out, pixels=images.reshape(len(container), -1),
                        width=container.width, height=container.height)
    print(f"decompressed {len(container)} images to {args.out}")
    return 0


def cmd_sample(args) -> int:
    model = serialization.load_model(args.model)
    images = model.sample(args.count, random_state=args.seed)
    grid = tile_grid(images * 255, n_cols=args.cols)
    write_pgm(args.out, grid)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_filters(args) -> int:
    model = serialization.load_model(args.model)
    filters = model.export_filters(args.which)[: args.max_filters]
    write_pgm(args.out, tile_grid(filters, n_cols=args.cols))
    print(f"wrote {filters.shape[0]} {args.which.upper()} filters to {args.out}")
    return 0


def cmd_bench(args) -> int:
    dataset = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = {"max_iterations": args.train_budget} if args.train_budget else None
    report = codec.run_table1(
        dataset,
        args.dataset,
        methods=tuple(args.methods),
        n_hidden=args.hidden,
        code_limit=args.code_limit,
        model_dir=out,
        train_overrides=overrides,
        seed=args.seed,
        log=lambda msg: print(msg, flush=True),
    )
    (out / f"table_{args.dataset}.txt").write_text(report.to_text() + "\n")
    (out / f"table_{args.dataset}.csv").write_text(report.to_csv() + "\n")
    print()
    print(report.to_text())
    print(f"\nwrote {out / f'table_{args.dataset}.txt'} and .csv")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SeqpixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
