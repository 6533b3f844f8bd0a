"""Command-line entry point: ``itanet {gen-data,train,eval,bench,grad-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .checkpoint import CheckpointError
from .data import FeatureFileError, ManifestError
from .episodes import SamplingError
from .model import TrainingError

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_TRAINING = 5
EXIT_OUTPUT = 6
EXIT_CHECK_FAILED = 1


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed for data, training and evaluation streams")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--out-dir", default="runs", help="directory for all outputs (default: runs)")
    common.add_argument("--precision", choices=["f32", "f64"])
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable (e.g. loss.beta=0)")

    parser = argparse.ArgumentParser(prog="itanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen-data,train,eval,bench,grad-check}")
    sub.add_parser("gen-data", parents=[common], help="write a synthetic twin-class dataset")
    sub.add_parser("train", parents=[common], help="episodic training; writes checkpoint and loss log")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint; writes eval_report.json")
    ev.add_argument("--checkpoint", help="checkpoint path (default: <out-dir>/checkpoint.itan)")
    sub.add_parser("bench", parents=[common], help="time the matching stages over T")
    sub.add_parser("grad-check", parents=[common], help="finite-difference check of every primitive and block")
    return parser


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ITANET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            return _fail("usage", "invalid command line", EXIT_USAGE)
        return 0

    try:
        cfg = pipeline.load_config(args.config)
        if args.seed is not None:
            pipeline.set_seed(cfg, args.seed)
        if args.precision:
            pipeline.set_precision(cfg, args.precision)
        for item in args.overrides:
            pipeline.apply_override(cfg, item)
    except (pipeline.ConfigError, KeyError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        return _fail("config", str(exc), EXIT_CONFIG)

    try:
        if args.command == "gen-data":
            print(pipeline.run_gen_data(cfg, args.out_dir, args.force))
        elif args.command == "train":
            ckpt, losses = pipeline.run_train(cfg, args.out_dir, args.force)
            print(ckpt)
            print(losses)
        elif args.command == "eval":
            print(pipeline.run_eval(cfg, args.out_dir, args.checkpoint, args.force))
        elif args.command == "bench":
            for r in pipeline.run_bench(cfg, args.out_dir, args.force):
                print(f"{r.stage:20s} slope={r.slope:.3f} residual={r.residual:.3f}")
        elif args.command == "grad-check":
            rows = pipeline.run_grad_check(cfg["train"]["seed"])
            print(f"{'case':16s} {'max_rel_err':>12s}  result")
            for name, err, ok in rows:
                print(f"{name:16s} {err:12.3e}  {'PASS' if ok else 'FAIL'}")
            return 0 if all(ok for *_, ok in rows) else EXIT_CHECK_FAILED
    except pipeline.OutputExistsError as exc:
        return _fail("output_exists", str(exc), EXIT_OUTPUT)
    except (pipeline.ConfigError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ManifestError, FeatureFileError, CheckpointError, SamplingError)):
            return _fail("data", str(exc), EXIT_DATA)
        return _fail("config", str(exc), EXIT_CONFIG)
    except TrainingError as exc:
        return _fail("training", str(exc), EXIT_TRAINING)
    except FileNotFoundError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    return 0


if __name__ == "__main__":
    sys.exit(main())
