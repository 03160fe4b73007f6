"""CLI: ``sqg-report render --spec fig.json`` and ``sqg-report report --run DIR``."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureSpec, render
from .report import write_report
from .tables import TableError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqg-report",
        description="Render deterministic figures and reports from run tables.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="draw one figure from a spec file")
    p_render.add_argument("--spec", required=True, metavar="PATH",
                          help="JSON figure spec")
    p_report = sub.add_parser("report", help="build a one-page run report")
    p_report.add_argument("--run", required=True, metavar="DIR",
                          help="run directory with manifest and tables")
    p_report.add_argument("--out", default=None, metavar="PATH",
                          help="output HTML path (default: <run>/report.html)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "render":
            path, _ = render(FigureSpec.from_file(args.spec))
            print(path)
        else:
            print(write_report(args.run, args.out))
    except (TableError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
