"""Report, metadata and raw-record files.

``report.csv`` is the frozen tabular output of every campaign: one header,
run rows and aggregate rows distinguished by ``row_type``, decimal point,
UTF-8, floats serialized with shortest round-trip ``repr`` so identical
campaigns produce byte-identical files. ``meta.json`` is the sidecar carrying
the schema version, the campaign configuration echo and provenance; it is the
only place timestamps live.

``raw_runs.csv`` holds per-sample records with the exact header
``stage,theta_rad,x`` (shot-noise units); ingestion validates structure and
values and reports the offending line number.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1"

REPORT_COLUMNS = [
    "row_type",
    "campaign",
    "point_index",
    "rep",
    "mode",
    "phi_true",
    "r_true",
    "eta_true",
    "delta_r",
    "m_total",
    "phi_hat",
    "r_hat",
    "eta_hat",
    "phi_error",
    "posterior_var_phi",
    "posterior_var_r",
    "normalized_var_phi",
    "est_variance",
    "mean_sq_error",
    "posterior_var_mean",
    "qcrb_phase_squeezed",
    "qcrb_phase_coherent",
    "crb_phase_adaptive",
    "crb_squeezing_adaptive",
    "db_gain",
    "repetitions",
    "seed",
]

RAW_COLUMNS = ["stage", "theta_rad", "x"]
_STAGE_ORDER = {"rough": 0, "fine": 1}


class IngestError(ValueError):
    """Malformed recorded-data file; the message cites the offending line."""


def format_cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_report_csv(path, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([format_cell(row.get(col)) for col in REPORT_COLUMNS])
    return path


def read_report_csv(path):
    """Read a report back as a list of dicts with numeric fields parsed."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if value == "" or value is None:
                    row[key] = None
                else:
                    try:
                        row[key] = float(value) if ("." in value or "e" in value or "inf" in value) else int(value)
                    except ValueError:
                        row[key] = value
            rows.append(row)
    return rows


def write_meta_json(path, payload):
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_meta_json(path):
    with Path(path).open(encoding="utf-8") as handle:
        return json.load(handle)


def write_raw_csv(path, record):
    """Persist a run's per-sample trajectory with the frozen raw header."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RAW_COLUMNS)
        for stage, theta, x in record.sample_rows():
            writer.writerow([stage, repr(float(theta)), repr(float(x))])
    return path


def ingest_recorded(path):
    """Load and validate a raw record; returns (stages, thetas, xs).

    Stage tags must be known and non-decreasing (all rough rows precede fine
    rows); angles and samples must parse as finite floats. Any violation
    raises IngestError naming the 1-based line number.
    """
    path = Path(path)
    stages, thetas, xs = [], [], []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: line 1: empty file, expected header {','.join(RAW_COLUMNS)}")
        if header != RAW_COLUMNS:
            raise IngestError(f"{path}: line 1: expected header {','.join(RAW_COLUMNS)}, got {','.join(header)}")
        last_rank = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            stage, theta_text, x_text = row
            if stage not in _STAGE_ORDER:
                raise IngestError(f"{path}: line {lineno}: unknown stage tag {stage!r}")
            rank = _STAGE_ORDER[stage]
            if rank < last_rank:
                raise IngestError(f"{path}: line {lineno}: stage {stage!r} after a later stage")
            last_rank = rank
            try:
                theta = float(theta_text)
                x = float(x_text)
            except ValueError:
                raise IngestError(f"{path}: line {lineno}: non-numeric value")
            if not (math.isfinite(theta) and math.isfinite(x)):
                raise IngestError(f"{path}: line {lineno}: non-finite value")
            stages.append(stage)
            thetas.append(theta)
            xs.append(x)
    return stages, np.asarray(thetas), np.asarray(xs)
