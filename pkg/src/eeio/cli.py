"""Command line entry point: ``eeio <subcommand> --config run.toml``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, EeioError
from .fixture import generate_fixture
from .pipeline import STAGE_ORDER, load_config, run_stages

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2

STAGE_HELP = {
    "extract-use": "derive sign-normalised use tables from balances",
    "build-map": "mapping matrices from concordance and splitting keys",
    "allocate": "allocate use tables onto sectors and households",
    "aggregate": "aggregate source products",
    "residual": "residual region = world minus modelled regions",
    "error": "relative error against reference accounts",
    "calibrate": "calibrate reference-period accounts",
    "extrapolate": "moving-average factors for later years and apply them",
    "footprint": "production- and consumption-based accounts",
    "report": "tidy report tables",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="eeio", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, type=Path, help="run config (TOML)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="worker threads (overrides config)")
        p.add_argument("--seed", type=int, default=1, help="random seed (fixture only)")

    run = sub.add_parser("run", help="run every stage")
    common(run)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    for name in STAGE_ORDER:
        p = sub.add_parser(name, help=STAGE_HELP[name])
        common(p)
        if name == "report":
            p.add_argument("--format", choices=("csv", "json"), default="csv")

    fx = sub.add_parser("fixture", help="write a synthetic input set and run.toml")
    common(fx, config_required=False)
    fx.add_argument("--regions", type=int, default=3)
    fx.add_argument("--sectors", type=int, default=4)
    fx.add_argument("--flows", type=int, default=6)
    fx.add_argument("--products", type=int, default=5)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("EEIO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    if args.command == "fixture":
        path = generate_fixture(
            args.out, seed=args.seed, R=args.regions, N=args.sectors, F=args.flows, P=args.products
        )
        print(path)
        return EXIT_OK

    stages = STAGE_ORDER if args.command == "run" else (args.command,)
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        config = load_config(args.config)
        manifest = run_stages(config, args.out, stages, jobs=args.jobs, fmt=getattr(args, "format", "csv"))
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EeioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL

    for failure in manifest.failures:
        if failure["stage"] in stages:
            print(f"{failure['stage']}: {failure['region']} {failure['year']}: {failure['error']}", file=sys.stderr)
    failed = any(f["stage"] in stages for f in manifest.failures)
    return EXIT_PARTIAL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
