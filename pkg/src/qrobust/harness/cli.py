"""``qrobust`` command line.

Exit codes: 0 success, 2 usage, 3 configuration error, 4 data or model file
format error, 5 evaluation error (including empty datasets and numeric
domain failures).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, FormatError, QRobustError
from . import config as config_mod
from . import pipeline

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_EVALUATION = 5


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrobust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment YAML file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", type=Path, help="override the output directory")
    common.add_argument("--shots", type=int, help="override the shot count")
    common.add_argument("--workers", type=int, help="parallel fitness evaluation threads")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", type=Path, help="classifier file (default: <out>/model.json)")

    sub.add_parser("prepare", parents=[common], help="write the train/test splits as IDX files")
    sub.add_parser("train", parents=[common], help="train the configured classifier")
    sub.add_parser("eval", parents=[common, model], help="evaluate on the test split")
    sub.add_parser("attack", parents=[common, model], help="run GA attacks on test images")
    cert = sub.add_parser("certify", parents=[common], help="certify shot-mode evaluation records")
    cert.add_argument("--records", type=Path, help="records file (default: <out>/records_shots.jsonl)")
    sweep = sub.add_parser("noise-sweep", parents=[common, model], help="accuracy across noise strengths")
    sweep.add_argument("--channel", action="append", dest="channels",
                       help="channel kind; repeat for several (default: from config)")
    sweep.add_argument("--grid", type=_grid, help="comma-separated probabilities (default: from config)")
    return parser


def _run(args) -> object:
    out = args.out.resolve() if args.out else None
    cfg = config_mod.load(args.config, seed=args.seed, output_dir=out, shots=args.shots, workers=args.workers)
    if args.command == "prepare":
        return pipeline.cmd_prepare(cfg)
    if args.command == "train":
        return pipeline.cmd_train(cfg)
    if args.command == "eval":
        return pipeline.cmd_eval(cfg, args.model)
    if args.command == "attack":
        return pipeline.cmd_attack(cfg, args.model)
    if args.command == "certify":
        return pipeline.cmd_certify(cfg, args.records)
    return pipeline.cmd_noise_sweep(cfg, args.model, args.channels, args.grid)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except QRobustError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVALUATION
    summary = {k: v for k, v in result.items() if k != "config"} if isinstance(result, dict) else result
    print(json.dumps(summary, sort_keys=True, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
