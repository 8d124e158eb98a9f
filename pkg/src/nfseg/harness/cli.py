"""Command-line entry point: ``nfseg <subcommand> ...``.

Every subcommand that takes ``--config`` also accepts ``--<field> <value>``
for any ExperimentConfig field, applied on top of the file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .. import data as D
from ..errors import NFSegError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig


def _config(args, extra):
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if len(extra) % 2:
        raise SystemExit(f"override flags come in --key value pairs, got {extra}")
    for flag, value in zip(extra[::2], extra[1::2]):
        if not flag.startswith("--"):
            raise SystemExit(f"expected an override flag, got {flag!r}")
        config = config.override(flag[2:], value)
    return config


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def cmd_generate_data(args, extra):
    for sub in ("images", "labels"):
        os.makedirs(os.path.join(args.out, sub), exist_ok=True)
    for i in range(args.count):
        sample = D.generate_synthetic(args.seed * 100000 + i, args.size, args.size)
        name = f"scene{args.seed}_{i:04d}.png"
        D.write_png(os.path.join(args.out, "images", name), D.image_to_png_array(sample.image))
        D.write_png(os.path.join(args.out, "labels", name), D.encode_label_colors(sample.mask))
    print(f"wrote {args.count} image/label pairs to {args.out}")


def cmd_train(args, extra):
    from .training import train

    config = _config(args, extra)
    result = train(config)
    save_checkpoint(args.out, result.checkpoint)
    with open(args.out + ".log", "w") as fh:
        fh.write(result.log_text())
    ckpt = result.checkpoint
    print(f"best validation IoU {ckpt.best_val_iou:.6f} at epoch {ckpt.epoch} "
          f"step {ckpt.step}; checkpoint {args.out}")


def cmd_evaluate(args, extra):
    from .training import evaluate, load_dataset

    ckpt = load_checkpoint(args.ckpt)
    if args.data:
        ckpt.config = ckpt.config.override("dataset", args.data)
    dataset = load_dataset(ckpt.config)
    samples = getattr(dataset, args.split)
    if not samples:
        raise SystemExit(f"split {args.split!r} is empty for dataset {ckpt.config.dataset!r}")
    report = evaluate(ckpt, samples)
    text = report.to_csv(include_runtime=True)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    print(report.table(D.CLASS_NAMES) if args.table else text, end="")


def cmd_predict(args, extra):
    from .training import predict

    ckpt = load_checkpoint(args.ckpt)
    image = D.read_image(args.image)
    mask, _ = predict(ckpt, image, args.out)
    print(f"wrote {mask.shape[1]}x{mask.shape[0]} mask to {args.out}")


def cmd_compare(args, extra):
    from .compare import compare

    config = _config(args, extra)
    if args.runs:
        os.makedirs(args.runs, exist_ok=True)
    result = compare(config, _ints(args.seeds), sizes=_ints(args.sizes), out_dir=args.runs)
    csv_text = result.to_csv(include_runtime=args.runtime)
    table = result.table() + result.trend_text()
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(csv_text)
    if args.table:
        with open(args.table, "w") as fh:
            fh.write(table)
    print(table, end="")


def cmd_gradcheck(args, extra):
    from .gradsuite import run_suite

    failed = False
    for name, (err, tol) in run_suite(trials=args.trials, seed=args.seed).items():
        ok = err < tol
        failed |= not ok
        print(f"{name:<34} {err:.2e}  (< {tol:.0e})  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nfseg", description="Conditional neural fields for semantic segmentation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write synthetic scenes as PNG tiles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one model, keep the best checkpoint")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="dense metrics of a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--data", help="tile directory to use instead of the configured dataset")
    p.add_argument("--csv", help="also write the CSV row here")
    p.add_argument("--table", action="store_true", help="print a per-class table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="segment one PNG image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="train and evaluate all seven strategies")
    p.add_argument("--config")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--sizes", default="64,128")
    p.add_argument("--csv", help="per-run CSV output")
    p.add_argument("--table", help="plain-text report output")
    p.add_argument("--runs", help="directory for per-run checkpoints and logs")
    p.add_argument("--runtime", action="store_true",
                   help="fill the runtime_s column (reruns then differ in that column)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of all kernels and decoders")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command not in ("train", "compare"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args, extra) or 0
    except NFSegError as exc:
        print(f"nfseg: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"nfseg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
