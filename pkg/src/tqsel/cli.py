"""``tqsel`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import (
    ExperimentConfig, evaluate, export_trajectory, load_config, make_toy_corpus, synthesize_dataset, train,
)
from .pipeline.synth import MANIFEST_NAME


def _cmd_toy_corpus(args) -> int:
    entries = make_toy_corpus(args.out, {"train": args.train, "eval": args.eval, "test": args.test},
                              duration=args.duration, sample_rate=args.sample_rate, seed=args.seed)
    print(f"wrote {len(entries)} clips to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    records = synthesize_dataset(
        args.corpus, args.protocol, args.count, args.split, args.seed, args.out,
        duration=args.duration, sample_rate=args.sample_rate, max_image_order=args.max_order,
    )
    print(f"wrote {len(records)} examples to {Path(args.out) / MANIFEST_NAME}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    result = train(cfg, args.train, args.eval, args.out, max_epochs=args.max_epochs)
    print(f"best eval MAE {result.best_mae:.2f} deg at epoch {result.best_epoch} "
          f"({result.epochs_run} epochs run); checkpoint {result.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    report = evaluate(args.ckpt, args.manifest, args.report)
    for split, mae in report.per_split.items():
        print(f"{split}: MAE {mae:.2f} deg")
    print(f"overall: MAE {report.mae:.2f} deg over {len(report.per_example)} examples")
    return 0


def _cmd_export(args) -> int:
    rows = export_trajectory(args.ckpt, args.example, manifest=args.manifest, out=args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(seed=args.seed)
    failed = 0
    for name, report in results:
        print(f"{name:40s} {report}")
        failed += not report.ok
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tqsel", description="Text-queried sound event localization toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("toy-corpus", help="write the synthetic 8-class corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, default=8, help="clips per class in the train split")
    s.add_argument("--eval", type=int, default=4)
    s.add_argument("--test", type=int, default=4)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--sample-rate", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_toy_corpus)

    s = sub.add_parser("synth", help="render spatial mixtures and a manifest")
    s.add_argument("--corpus", required=True)
    s.add_argument("--protocol", required=True, choices=["1dir1add", "2dir", "moving"])
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="train", choices=["train", "eval", "test"])
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--sample-rate", type=int, default=16000)
    s.add_argument("--max-order", type=int, default=20, help="image-source reflection order")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="JSON or key=value config file")
    s.add_argument("--train", required=True, help="training manifest")
    s.add_argument("--eval", required=True, help="eval manifest (early stopping)")
    s.add_argument("--out", required=True)
    s.add_argument("--max-epochs", type=int)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", required=True, help="output JSON report")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("export-traj", help="per-label-frame trajectory CSV for a moving example")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--example", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", help="defaults to the eval manifest recorded with the checkpoint")
    s.set_defaults(func=_cmd_export)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and both models")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, FloatingPointError) as exc:
        print(f"tqsel {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
