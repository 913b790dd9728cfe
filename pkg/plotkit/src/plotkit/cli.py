"""Command line interface: ``plotkit render`` builds the comparison SVG."""

from __future__ import annotations

import argparse
import sys

from .figure import render
from .io import SchemaError, read_targets, read_trajectory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render a three-panel comparison SVG")
    p.add_argument("--sol", required=True,
                   help="solution trajectory CSV")
    p.add_argument("--ref", required=True,
                   help="reference trajectory CSV")
    p.add_argument("--targets", required=True,
                   help="sampled target-value CSV")
    p.add_argument("--out", required=True, help="output SVG path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sol = read_trajectory(args.sol)
        ref = read_trajectory(args.ref)
        targets = read_targets(args.targets)
    except (SchemaError, OSError) as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 2
    ends = render(sol, ref, targets, args.out)
    for col in sorted(ends):
        print(f"end error {col}: {100.0 * ends[col]:.3g}%")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
