"""figures <kind> <report.csv> <out.(png|svg)>

Batch renderer for harness reports. Exit codes: 0 success, 2 usage or
report-loading errors.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import RENDERERS, ReportLoadError, UsageError, render_to_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figures", description=__doc__)
    parser.add_argument("kind", choices=sorted(RENDERERS), help="figure kind")
    parser.add_argument("report", help="path to report.csv (meta.json must sit beside it)")
    parser.add_argument("output", help="output image path, .png or .svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = render_to_file(args.kind, args.report, args.output)
    except (ReportLoadError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
