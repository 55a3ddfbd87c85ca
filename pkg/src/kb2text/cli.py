"""Command-line entry point.

Subcommands: harvest, train-se, train-gen, decode, evaluate, sweep,
audit-overgen.  Exit codes: 0 success, 2 config error, 3 numerical failure,
4 missing input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, MissingInputError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _add_common(sub):
    sub.add_argument("--config", type=Path, default=None, help="TOML config file")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", type=Path, default=Path("run"), help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kb2text",
        description="Triple-to-text generation with supportiveness-guided "
                    "training and decoding",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("harvest", help="build train/dev/test corpus files")
    _add_common(p)

    p = subs.add_parser("train-se", help="train the supportiveness estimator")
    _add_common(p)

    p = subs.add_parser("train-gen", help="train the sequence generator")
    _add_common(p)
    p.add_argument("--adaptor", choices=("none", "hard", "soft", "attention"),
                   default=None, help="override the configured adaptor")

    p = subs.add_parser("decode", help="decode a split to a TSV file")
    _add_common(p)
    p.add_argument("--adaptor", default=None)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    rbs_group = p.add_mutually_exclusive_group()
    rbs_group.add_argument("--rbs", dest="rbs", action="store_true", default=None)
    rbs_group.add_argument("--no-rbs", dest="rbs", action="store_false")

    p = subs.add_parser("evaluate", help="decode the test split and write reports")
    _add_common(p)
    p.add_argument("--adaptor", default=None)

    p = subs.add_parser("sweep", help="dataset-size trend over train prefixes")
    _add_common(p)
    p.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000])

    p = subs.add_parser("audit-overgen", help="over-generation n-gram table")
    _add_common(p)
    p.add_argument("decodes", nargs="*", type=Path,
                   help="decode TSVs to audit (default: all test decodes)")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    # Single-threaded math keeps repeated runs bitwise reproducible.
    import torch

    torch.set_num_threads(1)
    try:
        cfg = _load(args)
        if args.command == "harvest":
            stats = pipeline.build_corpus(cfg, args.out)
            print(json.dumps(stats, sort_keys=True, indent=2))
        elif args.command == "train-se":
            path = pipeline.train_estimator_cmd(cfg, args.out)
            print(path)
        elif args.command == "train-gen":
            path = pipeline.train_generator_cmd(cfg, args.out, adaptor=args.adaptor)
            print(path)
        elif args.command == "decode":
            path = pipeline.decode_cmd(cfg, args.out, adaptor=args.adaptor,
                                       rbs=args.rbs, split=args.split)
            print(path)
        elif args.command == "evaluate":
            reports = pipeline.evaluate_cmd(cfg, args.out, adaptor=args.adaptor)
            for variant, path in reports.items():
                print(f"{variant}\t{path}")
        elif args.command == "sweep":
            print(pipeline.sweep_cmd(cfg, args.out, sizes=tuple(args.sizes)))
        elif args.command == "audit-overgen":
            print(pipeline.audit_overgen_cmd(cfg, args.out,
                                             decode_paths=args.decodes or None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
