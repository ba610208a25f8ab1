"""Command-line entry point.

Subcommands: simulate, sweep-phase, scaling, robustness, sweep-squeezing,
bounds, replay. Sweep-style commands read a single JSON config document and
write ``report.csv`` plus ``meta.json`` (and optionally ``raw_runs.csv``)
into the configured output directory.

Exit codes: 0 success, 2 malformed configuration or input file, 3 replay
schedule mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .campaigns import (
    CampaignSpec,
    ConfigError,
    execute,
    run_bounds_report,
    run_replay,
    run_simulate,
)
from .protocol import ScheduleMismatchError
from .reports import IngestError, write_raw_csv
from .smc import DegeneratePosteriorError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SCHEDULE = 3

_KINDS_BY_COMMAND = {
    "simulate": ("simulate",),
    "sweep-phase": ("phase-sweep",),
    "scaling": ("scaling",),
    "robustness": ("robustness",),
    "sweep-squeezing": ("squeezing-sweep",),
    # replay reuses the generating simulate config
    "replay": ("simulate", "replay"),
}


def _load_spec(path, command) -> CampaignSpec:
    try:
        with Path(path).open(encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    spec = CampaignSpec.from_json_dict(data)
    expected = _KINDS_BY_COMMAND[command]
    if spec.kind not in expected:
        raise ConfigError(
            f"config campaign kind {spec.kind!r} does not match command {command!r} (expects one of {expected})"
        )
    return spec


def _write(report, output_dir):
    paths = report.write(output_dir)
    print(f"wrote {paths['report']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqzadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for command in ("simulate", "sweep-phase", "scaling", "robustness", "sweep-squeezing"):
        p = sub.add_parser(command, help=f"run the {command} campaign from a JSON config")
        p.add_argument("--config", required=True, help="path to the campaign config JSON")
        p.add_argument("--output-dir", default=None, help="override the config output directory")
        if command == "simulate":
            p.add_argument("--emit-raw", action="store_true", help="also write raw_runs.csv")

    p = sub.add_parser("bounds", help="write the precision-bound table for one probe")
    p.add_argument("--r", type=float, required=True, help="squeezing parameter")
    p.add_argument("--eta", type=float, required=True, help="detection efficiency")
    p.add_argument("--phi", type=float, default=math.pi / 4, help="reference phase for the composite model")
    p.add_argument("--mode", default="two-param", choices=("single", "two-param", "three-param"))
    p.add_argument("--m", type=int, default=20000, help="total samples in the composite model")
    p.add_argument("--m-rough", type=int, default=1200, help="rough samples in the composite model")
    p.add_argument("--output-dir", default="out")

    p = sub.add_parser("replay", help="re-estimate from a recorded raw_runs.csv")
    p.add_argument("--config", required=True, help="config JSON of the generating simulate run")
    p.add_argument("--data", required=True, help="path to the recorded raw_runs.csv")
    p.add_argument("--output-dir", default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bounds":
            report = run_bounds_report(args.r, args.eta, args.phi, args.mode, args.m, args.m_rough)
            return _write(report, args.output_dir)

        if args.command == "replay":
            spec = _load_spec(args.config, "replay")
            report = run_replay(spec, args.data)
            return _write(report, args.output_dir or spec.output_dir)

        spec = _load_spec(args.config, args.command)
        output_dir = args.output_dir or spec.output_dir
        if args.command == "simulate":
            if getattr(args, "emit_raw", False):
                spec = CampaignSpec.from_json_dict({**spec.to_json_dict(), "emit_raw": True})
            report, record = run_simulate(spec)
            code = _write(report, output_dir)
            if spec.emit_raw:
                raw_path = write_raw_csv(Path(output_dir) / "raw_runs.csv", record)
                print(f"wrote {raw_path}")
            return code

        report = execute(spec)
        return _write(report, output_dir)

    except (ConfigError, IngestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScheduleMismatchError as exc:
        print(f"schedule mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEDULE
    except DegeneratePosteriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
