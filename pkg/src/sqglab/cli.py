"""Command-line entry point: one experiment per invocation, driven by a
JSON config.  The subcommand lives in the config's ``command`` field;
flags only override reproducibility-neutral scalars."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError
from .io import ConfigError, parse_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqglab",
        description="Spectral solvers, minimum-action optimization, and "
                    "rare-event Monte Carlo for dissipative surface-transport "
                    "dynamics on the torus.",
    )
    parser.add_argument("--config", required=True, metavar="PATH",
                        help="JSON run configuration")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (overrides the config)")
    parser.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="master seed (overrides the config)")
    parser.add_argument("--workers", metavar="N", type=int, default=None,
                        help="sample-parallel worker count")
    parser.add_argument("--stride", metavar="K", type=int, default=None,
                        help="snapshot thinning stride")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    overrides = {
        "out_dir": args.out,
        "master_seed": args.seed,
        "workers": args.workers,
        "snapshot_stride": args.stride,
    }
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        for problem in exc.errors:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    # Echo the effective configuration so runs are self-describing.
    print(json.dumps(cfg.raw, sort_keys=True))
    for warning in cfg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
