"""Command line entry: plots <kind> --in CSV [--in CSV ...] --out IMG."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, render
from .schemas import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from simulation CSVs."
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV")
    parser.add_argument("--out", required=True, metavar="IMG")
    parser.add_argument("--schema", default=None,
                        help="override the input schema (curve: sherwood|transient)")
    parser.add_argument("--linear-x", action="store_true",
                        help="disable the log Pe axis on curves")
    parser.add_argument("--state", type=int, default=None,
                        help="scatter: keep experiences starting in this state")
    parser.add_argument("--channel", default="r_diff",
                        help="scatter: reward column to plot")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        inputs=args.inputs,
        output=args.out,
        schema=args.schema,
        log_x=not args.linear_x,
        state_filter=args.state,
        channel=args.channel,
        title=args.title,
    )
    try:
        render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
