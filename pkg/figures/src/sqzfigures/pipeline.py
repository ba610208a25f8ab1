"""Render harness reports into publication-style figures.

Consumes only the frozen report files: ``report.csv`` plus its ``meta.json``
sidecar (schema version "1"). Reports with an unknown schema version are
refused outright rather than guessed at. The pipeline never recomputes
physics: every curve is drawn from report columns, and the files are opened
read-only.

Figure kinds:

* polar       variance versus true phase on a polar grid (phase sweeps),
* scaling     normalized variance versus sample budget on a log axis,
* robustness  error versus squeezing mismatch for each protocol mode.

Figures embed the report's base seed and schema version in a footer so any
rendering can be traced back to the campaign that produced it, and carry no
timestamps so identical inputs yield identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

SUPPORTED_SCHEMA = "1"

_MODE_STYLE = {
    "single": dict(color="#1f77b4", marker="o"),
    "two-param": dict(color="#2ca02c", marker="s"),
    "three-param": dict(color="#9467bd", marker="^"),
}


class ReportLoadError(ValueError):
    """The report or its sidecar is missing, malformed, or unsupported."""


class UsageError(ValueError):
    """The report does not fit the requested figure kind."""


def _parse_cell(text):
    if text == "" or text is None:
        return None
    try:
        return float(text) if any(c in text for c in ".einf") else int(text)
    except ValueError:
        return text


@dataclass(frozen=True)
class ReportFrame:
    """A loaded report: parsed rows plus the sidecar metadata."""

    campaign: str
    rows: tuple
    meta: dict
    path: Path

    @property
    def aggregates(self):
        return [r for r in self.rows if r.get("row_type") == "aggregate"]

    @property
    def runs(self):
        return [r for r in self.rows if r.get("row_type") == "run"]

    @property
    def footer(self) -> str:
        return (
            f"seed {self.meta.get('base_seed')} | schema v{self.meta.get('schema_version')}"
            f" | sqzadapt {self.meta.get('package_version')}"
        )


def load_report(report_path) -> ReportFrame:
    """Load report.csv and its meta.json sidecar, enforcing the schema."""
    report_path = Path(report_path)
    if not report_path.is_file():
        raise ReportLoadError(f"report not found: {report_path}")
    meta_path = report_path.with_name("meta.json")
    if not meta_path.is_file():
        raise ReportLoadError(f"missing sidecar {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportLoadError(f"{meta_path} is not valid JSON: {exc}")
    version = str(meta.get("schema_version"))
    if version != SUPPORTED_SCHEMA:
        raise ReportLoadError(
            f"unsupported report schema version {version!r} (this pipeline understands {SUPPORTED_SCHEMA!r})"
        )
    campaign = meta.get("campaign")
    if not campaign:
        raise ReportLoadError(f"{meta_path} lacks a campaign kind")
    with report_path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        rows = tuple({k: _parse_cell(v) for k, v in raw.items()} for raw in reader)
    return ReportFrame(campaign=str(campaign), rows=rows, meta=meta, path=report_path)


def _require(frame: ReportFrame, kind: str):
    if frame.campaign != kind:
        raise UsageError(f"{frame.path} holds a {frame.campaign!r} report, not {kind!r}")
    if not frame.aggregates:
        raise UsageError(f"{frame.path} has no aggregate rows to plot")


def _finish(fig, frame: ReportFrame):
    fig.text(0.99, 0.01, frame.footer, ha="right", va="bottom", fontsize=7, color="0.4")
    return fig


def render_polar(frame: ReportFrame):
    """Phase sweep: variance (radial) versus true phase (angular) over [0, pi)."""
    _require(frame, "phase-sweep")
    points = sorted(frame.aggregates, key=lambda r: r["phi_true"])
    phi = np.array([r["phi_true"] for r in points])
    variance = np.array([r["posterior_var_mean"] for r in points])
    qcrb = np.array([r["qcrb_phase_squeezed"] for r in points])
    coherent = np.array([r["qcrb_phase_coherent"] for r in points])

    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="polar")
    ax.plot(phi, variance, linestyle="none", marker="o", color="#2ca02c", label="measured variance")
    ax.plot(phi, qcrb, color="#d62728", label="squeezed bound")
    ax.plot(phi, coherent, color="#1f77b4", label="coherent bound")
    ax.set_thetamin(0)
    ax.set_thetamax(180)
    ax.set_title(f"phase sweep, mode {points[0]['mode']}")
    ax.legend(loc="lower right", fontsize=8)
    return _finish(fig, frame)


def render_scaling(frame: ReportFrame):
    """Normalized variance versus sample budget, one curve per mode."""
    _require(frame, "scaling")
    modes = sorted({r["mode"] for r in frame.aggregates})
    fig, ax = plt.subplots(figsize=(6, 4))
    budgets = []
    for mode in modes:
        rows = sorted(
            (r for r in frame.aggregates if r["mode"] == mode), key=lambda r: r["m_total"]
        )
        m = np.array([r["m_total"] for r in rows])
        normalized = np.array([r["normalized_var_phi"] for r in rows])
        style = _MODE_STYLE.get(mode, {})
        ax.plot(m, normalized, label=mode, **style)
        budgets.append((m, rows))
    # bound lines from report columns: the squeezed bound normalizes to 1 and
    # the coherent bound to the ratio of the two bound columns
    m_all = np.array(sorted({r["m_total"] for r in frame.aggregates}))
    ax.plot(m_all, np.ones_like(m_all, dtype=float), color="#d62728", label="squeezed bound")
    by_m = {r["m_total"]: r for r in frame.aggregates}
    coherent = np.array(
        [by_m[m]["qcrb_phase_coherent"] / by_m[m]["qcrb_phase_squeezed"] for m in m_all]
    )
    ax.plot(m_all, coherent, color="0.2", linestyle=":", label="coherent bound")
    ax.set_xscale("log")
    ax.set_xlabel("homodyne samples")
    ax.set_ylabel("normalized phase variance")
    ax.legend(fontsize=8)
    return _finish(fig, frame)


def render_robustness(frame: ReportFrame):
    """Estimation error versus squeezing mismatch for every mode present."""
    _require(frame, "robustness")
    modes = sorted({r["mode"] for r in frame.aggregates})
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in modes:
        rows = sorted(
            (r for r in frame.aggregates if r["mode"] == mode), key=lambda r: r["delta_r"]
        )
        delta = np.array([r["delta_r"] for r in rows])
        error = np.array([r["mean_sq_error"] for r in rows])
        style = _MODE_STYLE.get(mode, {})
        ax.plot(delta, error, label=mode, **style)
    reference = sorted(
        (r for r in frame.aggregates if r["mode"] == modes[0]), key=lambda r: r["delta_r"]
    )
    delta = np.array([r["delta_r"] for r in reference])
    ax.plot(delta, [r["qcrb_phase_squeezed"] for r in reference], color="#d62728", linestyle="--", label="squeezed bound")
    ax.plot(delta, [r["qcrb_phase_coherent"] for r in reference], color="0.2", linestyle=":", label="coherent bound")
    ax.set_yscale("log")
    ax.set_xlabel("squeezing mismatch")
    ax.set_ylabel("mean squared phase error")
    ax.legend(fontsize=8)
    return _finish(fig, frame)


RENDERERS = {
    "polar": render_polar,
    "scaling": render_scaling,
    "robustness": render_robustness,
}


def save_figure(fig, out_path):
    """Write png or svg; svg output drops the volatile creation date."""
    out_path = Path(out_path)
    suffix = out_path.suffix.lower()
    if suffix not in (".png", ".svg"):
        raise UsageError(f"output must end in .png or .svg, got {out_path.name}")
    kwargs = {"dpi": 150} if suffix == ".png" else {"metadata": {"Date": None}}
    fig.savefig(out_path, **kwargs)
    plt.close(fig)
    return out_path


def render_to_file(kind: str, report_path, out_path):
    """Load, render, save: the full pipeline for one figure."""
    if kind not in RENDERERS:
        raise UsageError(f"unknown figure kind {kind!r}; choose from {sorted(RENDERERS)}")
    frame = load_report(report_path)
    fig = RENDERERS[kind](frame)
    return save_figure(fig, out_path)
