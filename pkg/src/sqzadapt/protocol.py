"""Stage scheduling and LO feedback for the adaptive estimation protocols.

Three modes share one loop:

* ``single``      estimate phi only; squeezing and efficiency are calibrated
                  inputs; feedback steers to phi_hat - phi_opt(r_eff).
* ``two-param``   estimate (phi, r) jointly with calibrated efficiency;
                  feedback steers to the decorrelation angle so the phase and
                  squeezing errors stay uncorrelated.
* ``three-param`` additionally tracks the efficiency through a
                  maximum-likelihood profile refreshed once per batch; each
                  Bayes update uses the profile maximizer of the previous step.

A run starts with a rough stage, a small budget split over fixed LO angles
(two for single, three for the joint modes), which removes the pi - phi
reflection ambiguity simply by updating the full-range posterior with
inconsistent-for-the-mirror data. The remaining budget is spent in
``adaptive_cycles`` fine batches, each preceded by a feedback update.

Runs are deterministic: one seed spawns separate generator streams for data
simulation and for resampling jitter, so replaying a recorded run consumes an
identical resampling stream and reproduces the original estimates exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fisher import (
    BoundSet,
    composite_fi_matrix,
    decorrelation_angle,
    optimal_angle_single,
    phase_bounds,
)
from .model import ProbeParams, draw_samples, effective_squeezing, reduce_lo_phase
from .smc import (
    EtaProfile,
    ParticleCloud,
    PosteriorSummary,
    SequentialUpdater,
    eta_ml_update,
    init_prior,
    make_eta_profile,
    summarize,
)

MODES = ("single", "two-param", "three-param")

_PRESETS = {
    "single": dict(m_total=5000, m_rough=200, rough_angles=(0.0, math.pi / 4), n_particles=10000),
    "two-param": dict(
        m_total=20000, m_rough=1200, rough_angles=(0.0, math.pi / 4, math.pi / 2), n_particles=20000
    ),
    "three-param": dict(
        m_total=20000, m_rough=1200, rough_angles=(0.0, math.pi / 4, math.pi / 2), n_particles=20000
    ),
}


class ScheduleMismatchError(RuntimeError):
    """Replayed data does not follow the planned measurement schedule."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Complete description of one estimation run."""

    mode: str
    m_total: int
    m_rough: int
    rough_angles: tuple
    adaptive_cycles: int = 3
    n_particles: int = 10000
    phi_range: tuple = (0.0, math.pi)
    r_range: tuple = (0.0, 3.0)
    r_calibrated: float | None = None
    eta_calibrated: float | None = None
    eta_grid: tuple = (0.5, 1.0, 101)
    seed: int = 0
    update_chunk: int = 25
    checkpoints: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.m_rough < self.m_total:
            raise ValueError(f"need 0 < m_rough < m_total, got {self.m_rough}, {self.m_total}")
        expected_angles = 2 if self.mode == "single" else 3
        if len(self.rough_angles) != expected_angles:
            raise ValueError(f"{self.mode} mode needs {expected_angles} rough angles, got {len(self.rough_angles)}")
        if self.adaptive_cycles < 1:
            raise ValueError("adaptive_cycles must be >= 1")
        if self.mode == "single" and self.r_calibrated is None:
            raise ValueError("single mode requires a calibrated squeezing level")
        if self.mode in ("single", "two-param") and self.eta_calibrated is None:
            raise ValueError(f"{self.mode} mode requires a calibrated efficiency")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ValueError("checkpoints must be strictly ascending")
        if self.checkpoints and (self.checkpoints[0] < 1 or self.checkpoints[-1] > self.m_total):
            raise ValueError("checkpoints must lie in [1, m_total]")

    @classmethod
    def preset(cls, mode: str, **overrides) -> "ProtocolConfig":
        """Mode defaults (budget, rough angles, particle count) plus overrides."""
        if mode not in _PRESETS:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        params = dict(_PRESETS[mode])
        params.update(overrides)
        return cls(mode=mode, **params)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "m_total": self.m_total,
            "m_rough": self.m_rough,
            "rough_angles": list(self.rough_angles),
            "adaptive_cycles": self.adaptive_cycles,
            "n_particles": self.n_particles,
            "phi_range": list(self.phi_range),
            "r_range": list(self.r_range),
            "r_calibrated": self.r_calibrated,
            "eta_calibrated": self.eta_calibrated,
            "eta_grid": list(self.eta_grid),
            "seed": self.seed,
            "update_chunk": self.update_chunk,
            "checkpoints": list(self.checkpoints),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {
            "mode",
            "m_total",
            "m_rough",
            "rough_angles",
            "adaptive_cycles",
            "n_particles",
            "phi_range",
            "r_range",
            "r_calibrated",
            "eta_calibrated",
            "eta_grid",
            "seed",
            "update_chunk",
            "checkpoints",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown protocol keys: {sorted(unknown)}")
        converted = dict(data)
        for key in ("rough_angles", "phi_range", "r_range", "eta_grid", "checkpoints"):
            if key in converted and converted[key] is not None:
                converted[key] = tuple(converted[key])
        return cls(**converted)


@dataclass(frozen=True)
class StageBatch:
    """One planned acquisition: stage tag, cycle index, LO angle, sample count.

    Fine batches carry ``theta=None``; the angle is fixed by feedback at run
    time.
    """

    stage: str
    cycle: int
    theta: float | None
    count: int


@dataclass(frozen=True)
class FeedbackUpdate:
    step_index: int
    previous_theta: float
    new_theta: float
    phi_hat: float
    r_hat: float | None
    eta_hat: float | None


@dataclass
class RunRecord:
    """Complete trajectory of one estimation run."""

    config: ProtocolConfig
    truth: ProbeParams | None
    batches: list  # (stage, cycle, theta, samples array)
    summaries: list  # (label, PosteriorSummary)
    feedbacks: list
    checkpoint_summaries: list  # (m, PosteriorSummary)
    phi_hat: float
    r_hat: float | None
    eta_hat: float | None
    posterior_var_phi: float
    posterior_var_r: float | None
    bounds: BoundSet
    resample_count: int

    @property
    def m_total(self) -> int:
        return sum(len(xs) for _, _, _, xs in self.batches)

    def sample_rows(self):
        """Yield (stage, theta, x) per sample in acquisition order."""
        for stage, _cycle, theta, xs in self.batches:
            for x in xs:
                yield stage, theta, float(x)


def plan_stages(config: ProtocolConfig) -> list[StageBatch]:
    """Expand a config into the ordered batch plan.

    The rough budget splits evenly over the rough angles, remainder to the
    earliest angles; the fine budget splits evenly over the adaptive cycles,
    remainder to the last batches.
    """
    plan = []
    n_angles = len(config.rough_angles)
    base, rem = divmod(config.m_rough, n_angles)
    for i, theta in enumerate(config.rough_angles):
        count = base + (1 if i < rem else 0)
        if count:
            plan.append(StageBatch("rough", 0, float(theta), count))
    m_fine = config.m_total - config.m_rough
    cycles = config.adaptive_cycles
    base, rem = divmod(m_fine, cycles)
    for c in range(cycles):
        count = base + (1 if c >= cycles - rem else 0)
        if count:
            plan.append(StageBatch("fine", c + 1, None, count))
    return plan


def next_lo_phase(mode: str, phi_hat: float, r_value: float, eta_value: float) -> float:
    """Feedback rule: single mode aims at the maximal-information quadrature,
    joint modes at the angle that decorrelates the phase and squeezing errors.

    ``r_value`` is the calibrated effective squeezing in single mode and the
    current squeezing estimate otherwise.
    """
    if not (math.isfinite(phi_hat) and math.isfinite(r_value)):
        raise ValueError("estimates must be finite")
    if mode == "single":
        offset = optimal_angle_single(r_value)
    else:
        offset = decorrelation_angle(r_value, eta_value)
    return reduce_lo_phase(phi_hat - offset)


def wrap_phase_error(estimate: float, truth: float) -> float:
    """Signed phase error on the pi-periodic parameter, in (-pi/2, pi/2]."""
    d = estimate - truth
    return d - math.pi * round(d / math.pi)


class SimulatedSource:
    """Draws homodyne samples from a fixed probe truth."""

    def __init__(self, probe: ProbeParams):
        self.probe = probe
        self._rng = None

    def bind(self, rng: np.random.Generator):
        self._rng = rng

    def draw(self, theta: float, count: int, stage: str) -> np.ndarray:
        if self._rng is None:
            raise RuntimeError("source not bound to a generator")
        return draw_samples(self._rng, self.probe, theta, count)


class ReplaySource:
    """Feeds back a recorded (stage, theta, x) stream, verifying the schedule.

    A replayed angle deviating from the planned one by more than 1e-6 rad
    would silently invalidate every likelihood, so it is an error instead.
    """

    ANGLE_TOLERANCE = 1e-6

    def __init__(self, stages, thetas, xs):
        self.stages = list(stages)
        self.thetas = np.asarray(thetas, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        if not (len(self.stages) == self.thetas.size == self.xs.size):
            raise ValueError("stage, theta and sample columns must have equal length")
        self.cursor = 0

    def bind(self, rng):
        pass

    def draw(self, theta: float, count: int, stage: str) -> np.ndarray:
        end = self.cursor + count
        if end > self.xs.size:
            raise ScheduleMismatchError(
                f"recorded stream ends at row {self.xs.size}, schedule expects {end} samples"
            )
        seg = slice(self.cursor, end)
        for offset, tag in enumerate(self.stages[seg]):
            if tag != stage:
                raise ScheduleMismatchError(
                    f"row {self.cursor + offset + 1}: stage {tag!r} does not match planned {stage!r}"
                )
        deviation = np.abs(np.remainder(self.thetas[seg] - theta + math.pi, 2.0 * math.pi) - math.pi)
        worst = int(np.argmax(deviation))
        if deviation[worst] > self.ANGLE_TOLERANCE:
            raise ScheduleMismatchError(
                f"row {self.cursor + worst + 1}: recorded angle {self.thetas[seg][worst]!r} "
                f"deviates from planned {theta!r} by more than {self.ANGLE_TOLERANCE}"
            )
        out = self.xs[seg]
        self.cursor = end
        return out

    def assert_exhausted(self):
        if self.cursor != self.xs.size:
            raise ScheduleMismatchError(
                f"recorded stream has {self.xs.size - self.cursor} unconsumed rows"
            )


def run_bounds(config: ProtocolConfig, phi_ref: float, r_ref: float, eta_ref: float) -> BoundSet:
    """Precision bounds for a run evaluated at a reference parameter point.

    The composite information matrix models the configured allocation with
    the fine angle at its feedback target. In single mode the adaptive CRB is
    the known-squeezing bound 1/F_phiphi rather than a matrix inverse.
    """
    probe = ProbeParams(phase=phi_ref % math.pi, squeezing=r_ref, efficiency=eta_ref)
    if config.mode == "single":
        offset = optimal_angle_single(effective_squeezing(r_ref, eta_ref))
    else:
        offset = decorrelation_angle(r_ref, eta_ref)
    theta_fine = probe.phase - offset
    composite = composite_fi_matrix(probe, theta_fine, config.m_rough, config.m_total, config.rough_angles)
    if config.mode == "single":
        bounds = phase_bounds(r_ref, eta_ref, composite=None)
        f_phi = float(composite[0, 0])
        return replace(bounds, crb_phase_adaptive=(1.0 / f_phi if f_phi > 0 else None))
    return phase_bounds(r_ref, eta_ref, composite=composite)


def _consume_with_checkpoints(updater, xs, theta, samples_seen, checkpoints, on_checkpoint):
    """Feed a batch, pausing exactly at requested cumulative sample counts."""
    position = 0
    total = len(xs)
    while position < total:
        next_cp = None
        for cp in checkpoints:
            if samples_seen + position < cp <= samples_seen + total:
                next_cp = cp
                break
        cut = (next_cp - samples_seen) if next_cp is not None else total
        updater.observe_batch(xs[position:cut], theta)
        if next_cp is not None:
            on_checkpoint(next_cp)
        position = cut
    return samples_seen + total


def run_estimation(config: ProtocolConfig, data_source, truth: ProbeParams | None = None) -> RunRecord:
    """Execute the full protocol against a data source and record everything."""
    plan = plan_stages(config)
    data_stream, resample_stream = np.random.SeedSequence(config.seed).spawn(2)
    data_source.bind(np.random.default_rng(data_stream))
    resample_rng = np.random.default_rng(resample_stream)

    dims = 1 if config.mode == "single" else 2
    cloud = init_prior(dims, config.n_particles, config.phi_range, config.r_range)

    profile: EtaProfile | None = None
    if config.mode == "three-param":
        profile = make_eta_profile(*config.eta_grid)
        eta_current = profile.eta_hat
    else:
        eta_current = float(config.eta_calibrated)

    updater = SequentialUpdater(
        cloud,
        resample_rng,
        efficiency=eta_current,
        fixed_r=config.r_calibrated if config.mode == "single" else None,
        chunk_size=config.update_chunk,
    )
    r_eff_cal = (
        effective_squeezing(config.r_calibrated, config.eta_calibrated)
        if config.mode == "single"
        else None
    )

    batches = []
    summaries = []
    feedbacks = []
    checkpoint_summaries = []
    checkpoints = list(config.checkpoints)
    samples_seen = 0
    theta_current = float(plan[0].theta)
    rough_batches = [b for b in plan if b.stage == "rough"]
    plan_rough_last = rough_batches[-1] if rough_batches else None

    def current_estimates():
        s = summarize(cloud)
        r_hat = s.r_mean if dims == 2 else None
        return s, s.phi_mean, r_hat

    def note_checkpoint(m):
        checkpoint_summaries.append((m, summarize(cloud)))

    def absorb(batch: StageBatch, theta: float):
        nonlocal samples_seen, profile, eta_current
        xs = data_source.draw(theta, batch.count, batch.stage)
        samples_seen = _consume_with_checkpoints(
            updater, xs, theta, samples_seen, checkpoints, note_checkpoint
        )
        batches.append((batch.stage, batch.cycle, theta, xs))
        if profile is not None:
            profile = eta_ml_update(profile, xs, theta, cloud)
            if batch.stage == "fine" or batch is plan_rough_last:
                # the profile maximizer is consumed only once the rough stage
                # has removed the pi - phi ambiguity; until then the midpoint
                # initialization stands
                eta_current = profile.eta_hat
                updater.efficiency = eta_current

    for batch in plan:
        if batch.stage == "rough":
            theta_current = float(batch.theta)
            absorb(batch, theta_current)
            continue
        summary, phi_hat, r_hat = current_estimates()
        if batch.cycle == 1:
            summaries.append(("rough", summary))
        if config.mode == "single":
            theta_new = next_lo_phase("single", phi_hat, r_eff_cal, eta_current)
        else:
            theta_new = next_lo_phase(config.mode, phi_hat, r_hat, eta_current)
        feedbacks.append(
            FeedbackUpdate(
                step_index=batch.cycle,
                previous_theta=theta_current,
                new_theta=theta_new,
                phi_hat=phi_hat,
                r_hat=r_hat,
                eta_hat=eta_current if config.mode == "three-param" else None,
            )
        )
        theta_current = theta_new
        absorb(batch, theta_current)
        summaries.append((f"cycle-{batch.cycle}", summarize(cloud)))

    if not any(label == "rough" for label, _ in summaries):
        summaries.append(("rough", summarize(cloud)))

    if hasattr(data_source, "assert_exhausted"):
        data_source.assert_exhausted()

    final = summarize(cloud)
    phi_hat = final.phi_mean
    r_hat = final.r_mean if dims == 2 else None
    eta_hat = eta_current if config.mode == "three-param" else None

    if truth is not None:
        ref = (truth.phase, truth.squeezing, truth.efficiency)
    else:
        r_ref = config.r_calibrated if config.r_calibrated is not None else (r_hat if r_hat is not None else 0.0)
        eta_ref = config.eta_calibrated if config.eta_calibrated is not None else (eta_hat or 0.75)
        ref = (phi_hat, r_ref, eta_ref)
    bounds = run_bounds(config, *ref)

    return RunRecord(
        config=config,
        truth=truth,
        batches=batches,
        summaries=summaries,
        feedbacks=feedbacks,
        checkpoint_summaries=checkpoint_summaries,
        phi_hat=phi_hat,
        r_hat=r_hat,
        eta_hat=eta_hat,
        posterior_var_phi=final.phi_variance,
        posterior_var_r=final.r_variance if dims == 2 else None,
        bounds=bounds,
        resample_count=updater.resample_count,
    )


def simulate_run(config: ProtocolConfig, probe: ProbeParams) -> RunRecord:
    """Convenience wrapper: run the protocol against a simulated probe."""
    return run_estimation(config, SimulatedSource(probe), truth=probe)
