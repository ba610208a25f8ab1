"""Campaign orchestration: seeded sweeps, aggregation and report assembly.

A campaign expands into independent runs with pre-assigned seeds
(``base_seed + point_index * 10**6 + repetition``), executes them in a worker
pool sized by the ``SQZADAPT_THREADS`` environment variable, and merges the
results in deterministic index order, so reports are byte-identical for any
thread count.

Conventions used in the rows:

* bound columns are divided by the row's ``m_total`` (the ``bounds`` campaign
  reports per-measurement values via ``m_total = 1``);
* ``normalized_var_phi`` is ``m_total * Var[phi] * 2 sinh^2(2 r_eff)`` at the
  row's true probe parameters;
* ``db_gain`` is ``10 log10(coherent bound / achieved variance)``, positive
  exactly when the run beats the lossless coherent probe;
* ``phi_error`` is the signed estimate error wrapped to (-pi/2, pi/2];
* aggregate ``est_variance`` is the ddof=1 sample variance of the wrapped
  errors (for a fixed true phase this equals the variance of the estimates)
  and ``mean_sq_error`` their mean square;
* scaling and robustness repetitions sweep the true phase over the midpoint
  grid ``(rep + 0.5) * pi / repetitions`` so the averages span [0, pi); when
  the config pins ``phi_true``, every repetition uses that phase and only the
  seed varies.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .fisher import BoundSet
from .model import ProbeParams, effective_squeezing
from .protocol import (
    ProtocolConfig,
    ReplaySource,
    RunRecord,
    run_bounds,
    run_estimation,
    simulate_run,
    wrap_phase_error,
)
from .reports import (
    REPORT_COLUMNS,
    SCHEMA_VERSION,
    ingest_recorded,
    write_meta_json,
    write_raw_csv,
    write_report_csv,
)

THREADS_ENV_VAR = "SQZADAPT_THREADS"

CAMPAIGN_KINDS = (
    "simulate",
    "phase-sweep",
    "scaling",
    "robustness",
    "squeezing-sweep",
    "bounds",
    "replay",
)

SEED_SCHEME = "run seed = base_seed + point_index * 10**6 + repetition"


class ConfigError(ValueError):
    """Malformed or inconsistent campaign configuration."""


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {value}")
    return value


def phase_grid(points: int) -> list:
    """Midpoint grid spanning [0, pi) without touching the seam."""
    return [(k + 0.5) * math.pi / points for k in range(points)]


def run_seed(base_seed: int, point_index: int, rep: int) -> int:
    return base_seed + point_index * 10**6 + rep


@dataclass(frozen=True)
class CampaignSpec:
    """One campaign: kind, probe truth, sweep grids and execution knobs.

    For robustness campaigns ``r_true`` is the calibrated baseline; the
    per-point truth is ``r_true + delta_r`` while single-mode runs keep their
    calibration pinned at the baseline.
    """

    kind: str
    mode: str = "single"
    modes: tuple = ("single", "two-param")
    r_true: float = 0.8
    eta_true: float = 0.8
    phi_true: float | None = None
    phi_values: tuple = ()
    m_checkpoints: tuple = ()
    delta_r_values: tuple = ()
    r_values: tuple = ()
    repetitions: int = 10
    base_seed: int = 0
    output_dir: str = "out"
    emit_raw: bool = False
    protocol_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CAMPAIGN_KINDS:
            raise ConfigError(f"unknown campaign kind {self.kind!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        grid = {
            "phase-sweep": self.phi_values,
            "scaling": self.m_checkpoints,
            "robustness": self.delta_r_values,
            "squeezing-sweep": self.r_values,
        }.get(self.kind)
        if grid is not None and len(grid) == 0:
            raise ConfigError(f"{self.kind} campaign needs a non-empty sweep grid")
        if self.kind in ("simulate", "replay") and self.phi_true is None and self.kind == "simulate":
            raise ConfigError("simulate campaign needs phi_true")

    @classmethod
    def from_json_dict(cls, data: dict) -> "CampaignSpec":
        if not isinstance(data, dict):
            raise ConfigError("campaign config must be a JSON object")
        data = dict(data)
        kind = data.pop("campaign", None)
        if kind is None:
            raise ConfigError("campaign config needs a 'campaign' key")
        protocol = data.pop("protocol", {})
        if not isinstance(protocol, dict):
            raise ConfigError("'protocol' must be an object of protocol overrides")
        phi_points = data.pop("phi_points", None)
        known = {
            "mode",
            "modes",
            "r_true",
            "eta_true",
            "phi_true",
            "phi_values",
            "m_checkpoints",
            "delta_r_values",
            "r_values",
            "repetitions",
            "base_seed",
            "output_dir",
            "emit_raw",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown campaign keys: {sorted(unknown)}")
        for key in ("modes", "phi_values", "m_checkpoints", "delta_r_values", "r_values"):
            if key in data:
                data[key] = tuple(data[key])
        if phi_points is not None:
            if "phi_values" in data and data["phi_values"]:
                raise ConfigError("give either phi_points or phi_values, not both")
            data["phi_values"] = tuple(phase_grid(int(phi_points)))
        try:
            return cls(kind=kind, protocol_overrides=protocol, **data)
        except TypeError as exc:
            raise ConfigError(str(exc))

    def to_json_dict(self) -> dict:
        return {
            "campaign": self.kind,
            "mode": self.mode,
            "modes": list(self.modes),
            "r_true": self.r_true,
            "eta_true": self.eta_true,
            "phi_true": self.phi_true,
            "phi_values": list(self.phi_values),
            "m_checkpoints": list(self.m_checkpoints),
            "delta_r_values": list(self.delta_r_values),
            "r_values": list(self.r_values),
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
            "emit_raw": self.emit_raw,
            "protocol": dict(self.protocol_overrides),
        }


def build_protocol(spec: CampaignSpec, mode: str, seed: int, **extra) -> ProtocolConfig:
    """Protocol config from the campaign template: calibration defaults to the
    probe truth unless explicitly overridden."""
    overrides = dict(spec.protocol_overrides)
    overrides.update(extra)
    overrides.setdefault("seed", seed)
    if mode == "single":
        overrides.setdefault("r_calibrated", spec.r_true)
    if mode in ("single", "two-param"):
        overrides.setdefault("eta_calibrated", spec.eta_true)
    overrides.pop("mode", None)
    try:
        return ProtocolConfig.preset(mode, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid protocol configuration: {exc}")


@dataclass
class CampaignReport:
    rows: list
    meta: dict

    def write(self, output_dir) -> dict:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": write_report_csv(out / "report.csv", self.rows)}
        paths["meta"] = write_meta_json(out / "meta.json", self.meta)
        return paths


# ---------------------------------------------------------------------------
# Row assembly
# ---------------------------------------------------------------------------


def _scaled(value, m):
    if value is None:
        return None
    if not math.isfinite(value):
        return math.inf
    return value / m


def _db_gain(coherent_at_m, variance):
    if coherent_at_m is None or variance is None or variance <= 0 or not math.isfinite(coherent_at_m):
        return None
    return 10.0 * math.log10(coherent_at_m / variance)


def _run_row(
    *,
    kind,
    point_index,
    rep,
    mode,
    m_total,
    bounds: BoundSet,
    phi_hat,
    post_var_phi,
    seed,
    truth: ProbeParams | None = None,
    delta_r=None,
    r_hat=None,
    eta_hat=None,
    post_var_r=None,
):
    row = {col: None for col in REPORT_COLUMNS}
    row.update(
        row_type="run",
        campaign=kind,
        point_index=point_index,
        rep=rep,
        mode=mode,
        m_total=m_total,
        phi_hat=phi_hat,
        r_hat=r_hat,
        eta_hat=eta_hat,
        posterior_var_phi=post_var_phi,
        posterior_var_r=post_var_r,
        delta_r=delta_r,
        seed=seed,
        qcrb_phase_squeezed=_scaled(bounds.qcrb_phase_squeezed, m_total),
        qcrb_phase_coherent=_scaled(bounds.qcrb_phase_coherent, m_total),
        crb_phase_adaptive=_scaled(bounds.crb_phase_adaptive, m_total),
        crb_squeezing_adaptive=_scaled(bounds.crb_squeezing_adaptive, m_total),
    )
    if truth is not None:
        row["phi_true"] = truth.phase
        row["r_true"] = truth.squeezing
        row["eta_true"] = truth.efficiency
        row["phi_error"] = wrap_phase_error(phi_hat, truth.phase)
        f_eff = 2.0 * math.sinh(2.0 * effective_squeezing(truth.squeezing, truth.efficiency)) ** 2
        row["normalized_var_phi"] = m_total * post_var_phi * f_eff
    row["db_gain"] = _db_gain(row["qcrb_phase_coherent"], post_var_phi)
    return row


def _aggregate_row(kind, point_index, run_rows):
    first = run_rows[0]
    row = {col: None for col in REPORT_COLUMNS}
    post_vars = [r["posterior_var_phi"] for r in run_rows]
    post_var_mean = float(np.mean(post_vars))
    row.update(
        row_type="aggregate",
        campaign=kind,
        point_index=point_index,
        mode=first["mode"],
        m_total=first["m_total"],
        phi_true=first["phi_true"] if _uniform(run_rows, "phi_true") else None,
        r_true=first["r_true"],
        eta_true=first["eta_true"],
        delta_r=first["delta_r"],
        phi_hat=float(np.mean([r["phi_hat"] for r in run_rows])),
        posterior_var_mean=post_var_mean,
        repetitions=len(run_rows),
        qcrb_phase_squeezed=first["qcrb_phase_squeezed"],
        qcrb_phase_coherent=first["qcrb_phase_coherent"],
        crb_phase_adaptive=first["crb_phase_adaptive"],
        crb_squeezing_adaptive=first["crb_squeezing_adaptive"],
    )
    if all(r["r_hat"] is not None for r in run_rows):
        row["r_hat"] = float(np.mean([r["r_hat"] for r in run_rows]))
    if all(r["eta_hat"] is not None for r in run_rows):
        row["eta_hat"] = float(np.mean([r["eta_hat"] for r in run_rows]))
    errors = [r["phi_error"] for r in run_rows if r["phi_error"] is not None]
    if errors:
        errors = np.asarray(errors)
        row["mean_sq_error"] = float(np.mean(errors**2))
        if errors.size >= 2:
            row["est_variance"] = float(np.var(errors, ddof=1))
    normalized = [r["normalized_var_phi"] for r in run_rows if r["normalized_var_phi"] is not None]
    if normalized:
        row["normalized_var_phi"] = float(np.mean(normalized))
    row["db_gain"] = _db_gain(row["qcrb_phase_coherent"], post_var_mean)
    return row


def _uniform(rows, key):
    return len({r[key] for r in rows}) == 1


def _parallel(jobs):
    """Run zero-argument jobs in the worker pool, results in job order."""
    workers = thread_count()
    if workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _meta(spec: CampaignSpec, extra=None) -> dict:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "campaign": spec.kind,
        "config": spec.to_json_dict(),
        "base_seed": spec.base_seed,
        "seed_scheme": SEED_SCHEME,
        "package_version": __version__,
        "threads": thread_count(),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        payload.update(extra)
    return payload


# ---------------------------------------------------------------------------
# Campaign runners
# ---------------------------------------------------------------------------


def _bounds_for(config: ProtocolConfig, m: int, phi_ref, r_ref, eta_ref) -> BoundSet:
    """Bounds for the allocation truncated at m samples (checkpoint rows)."""
    if m >= config.m_total:
        partial = config
    elif m > config.m_rough:
        partial = replace(config, m_total=m, checkpoints=())
    else:
        # rough-only prefix: model just the rough allocation
        partial = replace(config, m_total=m + 1, m_rough=m, checkpoints=())
    return run_bounds(partial, phi_ref, r_ref, eta_ref)


def run_phase_sweep(spec: CampaignSpec) -> CampaignReport:
    phis = list(spec.phi_values)

    def job(point, rep):
        def work():
            seed = run_seed(spec.base_seed, point, rep)
            probe = ProbeParams(phis[point], spec.r_true, spec.eta_true)
            config = build_protocol(spec, spec.mode, seed)
            record = simulate_run(config, probe)
            return _run_row(
                kind=spec.kind,
                point_index=point,
                rep=rep,
                mode=spec.mode,
                m_total=config.m_total,
                bounds=record.bounds,
                phi_hat=record.phi_hat,
                post_var_phi=record.posterior_var_phi,
                post_var_r=record.posterior_var_r,
                r_hat=record.r_hat,
                eta_hat=record.eta_hat,
                seed=seed,
                truth=probe,
            )

        return work

    jobs = [job(p, rep) for p in range(len(phis)) for rep in range(spec.repetitions)]
    run_rows = _parallel(jobs)
    rows = list(run_rows)
    for point in range(len(phis)):
        group = run_rows[point * spec.repetitions : (point + 1) * spec.repetitions]
        rows.append(_aggregate_row(spec.kind, point, group))
    return CampaignReport(rows=rows, meta=_meta(spec))


def run_scaling(spec: CampaignSpec) -> CampaignReport:
    checkpoints = tuple(sorted(spec.m_checkpoints))
    modes = list(spec.modes)
    m_total = checkpoints[-1]

    def job(mode_index, rep):
        mode = modes[mode_index]

        def work():
            seed = run_seed(spec.base_seed, mode_index, rep)
            phi_true = spec.phi_true if spec.phi_true is not None else (rep + 0.5) * math.pi / spec.repetitions
            probe = ProbeParams(phi_true, spec.r_true, spec.eta_true)
            config = build_protocol(spec, mode, seed, m_total=m_total, checkpoints=checkpoints)
            record = simulate_run(config, probe)
            out = []
            for ci, (m, summary) in enumerate(record.checkpoint_summaries):
                bounds = _bounds_for(config, m, probe.phase, probe.squeezing, probe.efficiency)
                out.append(
                    _run_row(
                        kind=spec.kind,
                        point_index=mode_index * len(checkpoints) + ci,
                        rep=rep,
                        mode=mode,
                        m_total=m,
                        bounds=bounds,
                        phi_hat=summary.phi_mean,
                        post_var_phi=summary.phi_variance,
                        post_var_r=summary.r_variance if summary.mean.size == 2 else None,
                        r_hat=summary.r_mean if summary.mean.size == 2 else None,
                        seed=seed,
                        truth=probe,
                    )
                )
            return out

        return work

    jobs = [job(mi, rep) for mi in range(len(modes)) for rep in range(spec.repetitions)]
    per_run = _parallel(jobs)
    run_rows = [row for chunk in per_run for row in chunk]
    rows = list(run_rows)
    for mi in range(len(modes)):
        for ci in range(len(checkpoints)):
            point = mi * len(checkpoints) + ci
            group = [r for r in run_rows if r["point_index"] == point]
            rows.append(_aggregate_row(spec.kind, point, group))
    return CampaignReport(rows=rows, meta=_meta(spec, {"m_checkpoints": list(checkpoints)}))


def run_robustness(spec: CampaignSpec) -> CampaignReport:
    deltas = list(spec.delta_r_values)
    modes = list(spec.modes)

    def job(point, mode, rep):
        def work():
            seed = run_seed(spec.base_seed, point, rep)
            phi_true = spec.phi_true if spec.phi_true is not None else (rep + 0.5) * math.pi / spec.repetitions
            probe = ProbeParams(phi_true, spec.r_true + deltas[point], spec.eta_true)
            # single mode keeps the stale calibration at the baseline r_true
            config = build_protocol(spec, mode, seed)
            record = simulate_run(config, probe)
            return _run_row(
                kind=spec.kind,
                point_index=point,
                rep=rep,
                mode=mode,
                m_total=config.m_total,
                bounds=record.bounds,
                phi_hat=record.phi_hat,
                post_var_phi=record.posterior_var_phi,
                post_var_r=record.posterior_var_r,
                r_hat=record.r_hat,
                eta_hat=record.eta_hat,
                seed=seed,
                truth=probe,
                delta_r=deltas[point],
            )

        return work

    jobs = [job(p, mode, rep) for p in range(len(deltas)) for mode in modes for rep in range(spec.repetitions)]
    run_rows = _parallel(jobs)
    rows = list(run_rows)
    for p in range(len(deltas)):
        for mode in modes:
            group = [r for r in run_rows if r["point_index"] == p and r["mode"] == mode]
            rows.append(_aggregate_row(spec.kind, p, group))
    return CampaignReport(rows=rows, meta=_meta(spec))


def run_squeezing_sweep(spec: CampaignSpec) -> CampaignReport:
    r_values = list(spec.r_values)
    mode = spec.mode if spec.mode != "single" else "two-param"

    def job(point, rep):
        def work():
            seed = run_seed(spec.base_seed, point, rep)
            phi_true = (rep + 0.5) * math.pi / spec.repetitions
            probe = ProbeParams(phi_true, r_values[point], spec.eta_true)
            config = build_protocol(spec, mode, seed)
            record = simulate_run(config, probe)
            return _run_row(
                kind=spec.kind,
                point_index=point,
                rep=rep,
                mode=mode,
                m_total=config.m_total,
                bounds=record.bounds,
                phi_hat=record.phi_hat,
                post_var_phi=record.posterior_var_phi,
                post_var_r=record.posterior_var_r,
                r_hat=record.r_hat,
                eta_hat=record.eta_hat,
                seed=seed,
                truth=probe,
            )

        return work

    jobs = [job(p, rep) for p in range(len(r_values)) for rep in range(spec.repetitions)]
    run_rows = _parallel(jobs)
    rows = list(run_rows)
    for p in range(len(r_values)):
        group = run_rows[p * spec.repetitions : (p + 1) * spec.repetitions]
        rows.append(_aggregate_row(spec.kind, p, group))
    return CampaignReport(rows=rows, meta=_meta(spec))


def run_simulate(spec: CampaignSpec) -> tuple[CampaignReport, RunRecord]:
    seed = run_seed(spec.base_seed, 0, 0)
    probe = ProbeParams(spec.phi_true, spec.r_true, spec.eta_true)
    config = build_protocol(spec, spec.mode, seed)
    record = simulate_run(config, probe)
    row = _run_row(
        kind=spec.kind,
        point_index=0,
        rep=0,
        mode=spec.mode,
        m_total=config.m_total,
        bounds=record.bounds,
        phi_hat=record.phi_hat,
        post_var_phi=record.posterior_var_phi,
        post_var_r=record.posterior_var_r,
        r_hat=record.r_hat,
        eta_hat=record.eta_hat,
        seed=seed,
        truth=probe,
    )
    rows = [row, _aggregate_row(spec.kind, 0, [row])]
    return CampaignReport(rows=rows, meta=_meta(spec, {"protocol": config.to_dict()})), record


def run_replay(spec: CampaignSpec, data_path) -> CampaignReport:
    """Re-estimate from a recorded stream under the generating configuration."""
    seed = run_seed(spec.base_seed, 0, 0)
    config = build_protocol(spec, spec.mode, seed)
    stages, thetas, xs = ingest_recorded(data_path)
    source = ReplaySource(stages, thetas, xs)
    record = run_estimation(config, source, truth=None)
    row = _run_row(
        kind="replay",
        point_index=0,
        rep=0,
        mode=spec.mode,
        m_total=config.m_total,
        bounds=record.bounds,
        phi_hat=record.phi_hat,
        post_var_phi=record.posterior_var_phi,
        post_var_r=record.posterior_var_r,
        r_hat=record.r_hat,
        eta_hat=record.eta_hat,
        seed=seed,
        truth=None,
    )
    rows = [row, _aggregate_row("replay", 0, [row])]
    return CampaignReport(rows=rows, meta=_meta(spec, {"replayed_from": str(data_path)}))


def run_bounds_report(r, eta, phi_ref, mode, m_total, m_rough, output_seed=0) -> CampaignReport:
    """Single-row bound table; m_total = 1 makes all columns per-measurement."""
    config = ProtocolConfig.preset(
        mode,
        m_total=m_total,
        m_rough=m_rough,
        r_calibrated=r if mode == "single" else None,
        eta_calibrated=eta if mode in ("single", "two-param") else None,
        seed=output_seed,
    )
    bounds = run_bounds(config, phi_ref, r, eta)
    row = {col: None for col in REPORT_COLUMNS}
    row.update(
        row_type="aggregate",
        campaign="bounds",
        point_index=0,
        mode=mode,
        m_total=1,
        phi_true=phi_ref,
        r_true=r,
        eta_true=eta,
        qcrb_phase_squeezed=bounds.qcrb_phase_squeezed,
        qcrb_phase_coherent=bounds.qcrb_phase_coherent,
        crb_phase_adaptive=bounds.crb_phase_adaptive,
        crb_squeezing_adaptive=bounds.crb_squeezing_adaptive,
        repetitions=0,
    )
    spec = CampaignSpec(kind="bounds", mode=mode, r_true=r, eta_true=eta, phi_true=phi_ref)
    meta = _meta(spec, {"m_total_model": m_total, "m_rough_model": m_rough})
    return CampaignReport(rows=[row], meta=meta)


def execute(spec: CampaignSpec):
    """Dispatch a sweep-style campaign to its runner."""
    runners = {
        "phase-sweep": run_phase_sweep,
        "scaling": run_scaling,
        "robustness": run_robustness,
        "squeezing-sweep": run_squeezing_sweep,
    }
    if spec.kind not in runners:
        raise ConfigError(f"campaign kind {spec.kind!r} is not a sweep campaign")
    return runners[spec.kind](spec)
