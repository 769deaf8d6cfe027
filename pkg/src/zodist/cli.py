"""Command-line entry point: ``zodist run`` and ``zodist presets``."""

from __future__ import annotations

import argparse
import sys

from .config import VerificationFailed, list_presets, run_experiment
from .errors import ZodistError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zodist", description="Asynchronous distributed zeroth-order optimization")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a config file or a preset")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON run configuration")
    src.add_argument("--preset", help="named preset (see `zodist presets`)")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--out", default="runs", help="output directory")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config field by dotted path; repeatable")
    sub.add_parser("presets", help="list presets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name, desc in list_presets():
            print(f"{name:24s} {desc}")
        return 0
    try:
        out = run_experiment(args.config, args.overrides, preset=args.preset, seed=args.seed, out=args.out)
    except VerificationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ZodistError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
