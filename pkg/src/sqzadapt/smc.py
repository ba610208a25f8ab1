"""Sequential Monte Carlo engine for the homodyne posterior.

The posterior over the phase (optionally jointly with the squeezing level) is
carried by a weighted particle cloud. Weight updates run in log space and,
because every sample in a batch shares one LO angle and the Gaussian model is
zero mean, a whole batch collapses to the sufficient statistics
``(n, sum x^2)``: updating with a batch is exact, not an approximation.

Resampling is Liu-West with shrinkage a = 0.98: a systematic draw by weight,
contraction of the drawn positions towards the weighted mean, and jitter with
covariance (1 - a^2) times the cloud covariance, which preserves the first
two posterior moments in expectation. Particles pushed outside the prior box
are reflected back. The resampling policy (trigger iff ESS < n/2) lives in
``SequentialUpdater``.

Phase means and variances honour the pi-periodicity of the problem: when the
cloud is tight on the doubled-angle circle but spread out on the line, the
posterior straddles the 0/pi seam and moments are taken directionally.

``grid_oracle`` is an independent dense-grid Bayes evaluation (trapezoid
normalized) used to cross-check the particle engine; it shares none of the
particle code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import variance_coefficients

LIU_WEST_SHRINKAGE = 0.98
ESS_RESAMPLE_FRACTION = 0.5
DEFAULT_PHI_RANGE = (0.0, math.pi)
DEFAULT_R_RANGE = (0.0, 3.0)
# seam handling: straddle = tight on the doubled-angle circle, wide on the line
_STRADDLE_CIRCULAR_MAX = 0.5
_STRADDLE_LINEAR_MIN = 0.1


class DegeneratePosteriorError(RuntimeError):
    """All particle weights vanished: the model cannot explain the data."""


@dataclass
class ParticleCloud:
    """Weighted particles over phi (1D) or (phi, r) (2D).

    Single writer: one update pipeline mutates a cloud at a time. ``version``
    increments whenever positions move, so downstream caches can invalidate.
    """

    positions: np.ndarray
    weights: np.ndarray
    phi_range: tuple = DEFAULT_PHI_RANGE
    r_range: tuple | None = None
    version: int = 0

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dimensions(self) -> int:
        return 1 if self.positions.ndim == 1 else self.positions.shape[1]

    @property
    def phi(self) -> np.ndarray:
        return self.positions if self.dimensions == 1 else self.positions[:, 0]

    @property
    def r(self) -> np.ndarray:
        if self.dimensions == 1:
            raise ValueError("1D cloud carries no squeezing coordinate")
        return self.positions[:, 1]

    def validate(self):
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")


def _halton(count: int, base: int) -> np.ndarray:
    """Radical-inverse (Halton) sequence in [0, 1)."""
    out = np.zeros(count)
    index = np.arange(1, count + 1)
    factor = 1.0 / base
    while np.any(index > 0):
        out += factor * (index % base)
        index //= base
        factor /= base
    return out


def init_prior(
    dimensions: int,
    n_particles: int,
    phi_range=DEFAULT_PHI_RANGE,
    r_range=DEFAULT_R_RANGE,
) -> ParticleCloud:
    """Flat-prior cloud: midpoint grid in 1D, Halton layout in 2D.

    Weights start uniform at 1/n. The deterministic layouts make the prior
    cloud independent of any generator state.
    """
    if n_particles < 2:
        raise ValueError(f"n_particles must be >= 2, got {n_particles}")
    if dimensions not in (1, 2):
        raise ValueError(f"dimensions must be 1 or 2, got {dimensions}")
    lo, hi = phi_range
    if not hi > lo:
        raise ValueError("phi_range must be non-degenerate")
    if dimensions == 1:
        positions = lo + (hi - lo) * (np.arange(n_particles) + 0.5) / n_particles
        r_rng = None
    else:
        rlo, rhi = r_range
        if not rhi > rlo:
            raise ValueError("r_range must be non-degenerate")
        positions = np.column_stack(
            [
                lo + (hi - lo) * _halton(n_particles, 2),
                rlo + (rhi - rlo) * _halton(n_particles, 3),
            ]
        )
        r_rng = (float(rlo), float(rhi))
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleCloud(positions=positions, weights=weights, phi_range=(float(lo), float(hi)), r_range=r_rng)


# ---------------------------------------------------------------------------
# Weight updates
# ---------------------------------------------------------------------------


def _variance_profile(cos2t, squeezing, efficiency):
    """Per-particle model variance given cos(2 * relative angle).

    Uses the half-angle form var = ((A+B) - (B-A) cos 2t)/8, which is even in
    the relative angle, so no sign bookkeeping is needed here.
    """
    a, b = variance_coefficients(squeezing, efficiency)
    return ((a + b) - (b - a) * cos2t) / 8.0


def _batch_log_likelihood(cloud, sum_sq, count, theta, efficiency, fixed_r):
    phi = cloud.phi
    cos2t = np.cos(2.0 * (phi - theta))
    if cloud.dimensions == 1:
        if fixed_r is None:
            raise ValueError("1D cloud requires fixed_r")
        var = _variance_profile(cos2t, fixed_r, efficiency)
    else:
        var = _variance_profile(cos2t, cloud.r, efficiency)
    return -0.5 * count * np.log(2.0 * math.pi * var) - sum_sq / (2.0 * var)


def _apply_log_likelihood(cloud, log_lik):
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + log_lik
    shift = np.max(logw)
    if not np.isfinite(shift):
        raise DegeneratePosteriorError("posterior weight underflow: model/data mismatch")
    w = np.exp(logw - shift)
    total = float(w.sum())
    if total <= 0 or not math.isfinite(total):
        raise DegeneratePosteriorError("posterior weight underflow: model/data mismatch")
    cloud.weights = w / total
    return cloud


def update_weights_batch(cloud, xs, theta, efficiency, fixed_r=None) -> ParticleCloud:
    """Bayes-update the cloud with a batch of samples sharing one LO angle.

    Exactly equivalent to the per-sample product because the batch enters only
    through (n, sum x^2). Performed in log space and renormalized.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return cloud
    if not np.all(np.isfinite(xs)):
        raise ValueError("samples must be finite")
    with np.errstate(over="ignore"):
        sum_sq = float(xs @ xs)
        log_lik = _batch_log_likelihood(cloud, sum_sq, xs.size, theta, efficiency, fixed_r)
    return _apply_log_likelihood(cloud, log_lik)


def update_weights(cloud, x, theta, efficiency, fixed_r=None) -> ParticleCloud:
    """Bayes-update the cloud with a single homodyne sample."""
    return update_weights_batch(cloud, [x], theta, efficiency, fixed_r)


def effective_sample_size(cloud: ParticleCloud) -> float:
    """1 / sum(w^2), between 1 (one-hot) and n (uniform)."""
    return 1.0 / float(cloud.weights @ cloud.weights)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _reflect(values, lo, hi):
    width = hi - lo
    folded = np.mod(values - lo, 2.0 * width)
    folded = np.where(folded > width, 2.0 * width - folded, folded)
    # keep the half-open invariant of the phi interval
    return np.minimum(lo + folded, np.nextafter(hi, lo))


def _weighted_moments(cloud):
    w = cloud.weights
    if cloud.dimensions == 1:
        mean = float(w @ cloud.positions)
        var = float(w @ (cloud.positions - mean) ** 2)
        return mean, var
    mean = w @ cloud.positions
    centred = cloud.positions - mean
    cov = (centred * w[:, None]).T @ centred
    return mean, cov


def resample(cloud: ParticleCloud, rng: np.random.Generator, shrinkage: float = LIU_WEST_SHRINKAGE) -> ParticleCloud:
    """Liu-West resample: systematic draw, shrink to the mean, jitter, reflect.

    Leaves uniform weights; preserves posterior mean and covariance in
    expectation (contraction a and jitter variance 1 - a^2 balance exactly).
    """
    n = cloud.n_particles
    w = cloud.weights
    total = float(w.sum())
    if total <= 0 or not math.isfinite(total):
        raise DegeneratePosteriorError("cannot resample a cloud with zero total weight")
    mean, cov = _weighted_moments(cloud)

    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    picks = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(cum, picks, side="left")

    a = shrinkage
    if cloud.dimensions == 1:
        new = a * cloud.positions[idx] + (1.0 - a) * mean
        jitter_var = max((1.0 - a * a) * cov, 0.0)
        if jitter_var > 0:
            new = new + math.sqrt(jitter_var) * rng.standard_normal(n)
        new = _reflect(new, *cloud.phi_range)
    else:
        new = a * cloud.positions[idx] + (1.0 - a) * mean
        jitter_cov = (1.0 - a * a) * cov
        evals, evecs = np.linalg.eigh(jitter_cov)
        evals = np.clip(evals, 0.0, None)
        if np.any(evals > 0):
            root = evecs * np.sqrt(evals)
            new = new + rng.standard_normal((n, 2)) @ root.T
        new[:, 0] = _reflect(new[:, 0], *cloud.phi_range)
        new[:, 1] = _reflect(new[:, 1], *cloud.r_range)

    cloud.positions = new
    cloud.weights = np.full(n, 1.0 / n)
    cloud.version += 1
    return cloud


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorSummary:
    """First two posterior moments per dimension plus the cloud health."""

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None
    ess: float
    directional: bool = False

    @property
    def phi_mean(self) -> float:
        return float(self.mean[0])

    @property
    def phi_variance(self) -> float:
        return float(self.variance[0])

    @property
    def r_mean(self) -> float:
        return float(self.mean[1])

    @property
    def r_variance(self) -> float:
        return float(self.variance[1])


def _wrap_phase_residual(values, center):
    d = values - center
    return d - math.pi * np.round(d / math.pi)


def _phase_moments(phi, w, phi_range):
    """Linear moments, switching to doubled-angle directional statistics when
    the mass straddles the 0/pi seam (tight on the circle, wide on the line)."""
    mean = float(w @ phi)
    var = float(w @ (phi - mean) ** 2)
    z = complex(w @ np.cos(2.0 * phi), w @ np.sin(2.0 * phi))
    circular_spread = 1.0 - abs(z)
    if circular_spread < _STRADDLE_CIRCULAR_MAX and var > _STRADDLE_LINEAR_MIN:
        lo, hi = phi_range
        width = hi - lo
        dir_mean = 0.5 * math.atan2(z.imag, z.real)
        dir_mean = lo + (dir_mean - lo) % width
        residuals = _wrap_phase_residual(phi, dir_mean)
        dir_var = float(w @ residuals**2)
        return dir_mean, dir_var, True
    return mean, var, False


def summarize(cloud: ParticleCloud) -> PosteriorSummary:
    """Posterior mean/variance by the weighted discrete sums over particles."""
    w = cloud.weights
    phi_mean, phi_var, directional = _phase_moments(cloud.phi, w, cloud.phi_range)
    ess = effective_sample_size(cloud)
    if cloud.dimensions == 1:
        return PosteriorSummary(
            mean=np.array([phi_mean]),
            variance=np.array([phi_var]),
            covariance=None,
            ess=ess,
            directional=directional,
        )
    r = cloud.r
    r_mean = float(w @ r)
    r_var = float(w @ (r - r_mean) ** 2)
    phi_res = _wrap_phase_residual(cloud.phi, phi_mean) if directional else cloud.phi - phi_mean
    cross = float(w @ (phi_res * (r - r_mean)))
    cov = np.array([[phi_var, cross], [cross, r_var]])
    return PosteriorSummary(
        mean=np.array([phi_mean, r_mean]),
        variance=np.array([phi_var, r_var]),
        covariance=cov,
        ess=ess,
        directional=directional,
    )


# ---------------------------------------------------------------------------
# Dense-grid reference posterior
# ---------------------------------------------------------------------------


def _grouped_sufficient_stats(xs, thetas):
    """Collapse consecutive equal-angle samples to (theta, n, sum x^2) runs."""
    xs = np.asarray(xs, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if xs.shape != thetas.shape:
        raise ValueError("samples and angles must have equal length")
    groups = []
    start = 0
    for i in range(1, len(xs) + 1):
        if i == len(xs) or thetas[i] != thetas[start]:
            seg = xs[start:i]
            groups.append((float(thetas[start]), seg.size, float(seg @ seg)))
            start = i
    return groups


def grid_oracle(
    xs,
    thetas,
    efficiency,
    fixed_r=None,
    resolution=1000,
    phi_range=DEFAULT_PHI_RANGE,
    r_range=DEFAULT_R_RANGE,
) -> PosteriorSummary:
    """Dense-grid Bayes posterior, independent of the particle engine.

    Flat prior over the same ranges, trapezoid-normalized moments. 1D over
    phi when ``fixed_r`` is given, else 2D over (phi, r).
    """
    if resolution < 500:
        raise ValueError(f"grid resolution must be >= 500 per dimension, got {resolution}")
    groups = _grouped_sufficient_stats(xs, thetas)
    lo, hi = phi_range
    phi = np.linspace(lo, hi, resolution)

    if fixed_r is not None:
        log_post = np.zeros(resolution)
        for theta, n, sum_sq in groups:
            var = _variance_profile(np.cos(2.0 * (phi - theta)), fixed_r, efficiency)
            log_post += -0.5 * n * np.log(2.0 * math.pi * var) - sum_sq / (2.0 * var)
        density = np.exp(log_post - log_post.max())
        norm = np.trapezoid(density, phi)
        density /= norm
        mean = float(np.trapezoid(phi * density, phi))
        var = float(np.trapezoid((phi - mean) ** 2 * density, phi))
        return PosteriorSummary(
            mean=np.array([mean]), variance=np.array([var]), covariance=None, ess=math.nan
        )

    rlo, rhi = r_range
    r = np.linspace(rlo, rhi, resolution)
    log_post = np.zeros((resolution, resolution))
    a_r, b_r = variance_coefficients(r, efficiency)
    for theta, n, sum_sq in groups:
        cos2t = np.cos(2.0 * (phi - theta))
        var = ((a_r + b_r)[None, :] - (b_r - a_r)[None, :] * cos2t[:, None]) / 8.0
        log_post += -0.5 * n * np.log(2.0 * math.pi * var) - sum_sq / (2.0 * var)
    density = np.exp(log_post - log_post.max())
    norm = float(np.trapezoid(np.trapezoid(density, r, axis=1), phi))
    density /= norm

    marg_phi = np.trapezoid(density, r, axis=1)
    marg_r = np.trapezoid(density, phi, axis=0)
    phi_mean = float(np.trapezoid(phi * marg_phi, phi))
    phi_var = float(np.trapezoid((phi - phi_mean) ** 2 * marg_phi, phi))
    r_mean = float(np.trapezoid(r * marg_r, r))
    r_var = float(np.trapezoid((r - r_mean) ** 2 * marg_r, r))
    cross_density = np.trapezoid(density * (r - r_mean)[None, :], r, axis=1)
    cross = float(np.trapezoid((phi - phi_mean) * cross_density, phi))
    cov = np.array([[phi_var, cross], [cross, r_var]])
    return PosteriorSummary(
        mean=np.array([phi_mean, r_mean]), variance=np.array([phi_var, r_var]), covariance=cov, ess=math.nan
    )


# ---------------------------------------------------------------------------
# Efficiency profile (hybrid maximum-likelihood track)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EtaProfile:
    """Profile log-likelihood of the efficiency over a fixed grid.

    Batches enter as sufficient statistics (theta, count, sum of squares) and
    the whole profile is re-evaluated at the latest (phi_hat, r_hat) point
    estimates on every update, so early batches scored while the phase was
    still ambiguous are re-scored once the posterior has settled.
    """

    grid: np.ndarray
    log_posterior: np.ndarray
    batches: tuple = ()
    updates: int = 0

    @property
    def low_information(self) -> bool:
        return float(np.ptp(self.log_posterior)) < 1e-12

    @property
    def eta_hat(self) -> float:
        if self.low_information:
            return float(self.grid[len(self.grid) // 2])
        lp = self.log_posterior
        best = np.flatnonzero(lp == lp.max())
        # ties resolve towards larger efficiency
        return float(self.grid[best[-1]])


def make_eta_profile(lo: float = 0.5, hi: float = 1.0, points: int = 101) -> EtaProfile:
    if points < 1:
        raise ValueError("points must be >= 1")
    return EtaProfile(grid=np.linspace(lo, hi, points), log_posterior=np.zeros(points))


def _profile_log_likelihood(grid, batches, phi_hat, r_hat):
    total = np.zeros(len(grid))
    for theta, count, sum_sq in batches:
        cos2t = math.cos(2.0 * (phi_hat - theta))
        var = _variance_profile(cos2t, r_hat, grid)
        total += -0.5 * count * np.log(2.0 * math.pi * var) - sum_sq / (2.0 * var)
    return total


def eta_ml_update(profile: EtaProfile, xs, theta, cloud: ParticleCloud) -> EtaProfile:
    """Fold a batch into the profile and re-score it at the cloud's estimates.

    The profile argmax is the efficiency handed to the next update step.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return profile
    if cloud.dimensions != 2:
        raise ValueError("efficiency profiling requires a 2D (phi, r) cloud")
    summary = summarize(cloud)
    batches = profile.batches + ((float(theta), xs.size, float(xs @ xs)),)
    log_posterior = _profile_log_likelihood(profile.grid, batches, summary.phi_mean, summary.r_mean)
    return EtaProfile(
        grid=profile.grid,
        log_posterior=log_posterior,
        batches=batches,
        updates=profile.updates + 1,
    )


# ---------------------------------------------------------------------------
# Chunked update driver with the resampling policy
# ---------------------------------------------------------------------------


class SequentialUpdater:
    """Feeds batches through the cloud with the ESS-triggered resampling rule.

    Updates are applied in chunks of at most ``chunk_size`` samples; after
    every chunk the cloud is resampled iff ESS < ess_fraction * n. Per-position
    trigonometry and exponentials are cached across chunks and invalidated by
    the cloud version counter.
    """

    def __init__(
        self,
        cloud: ParticleCloud,
        rng: np.random.Generator,
        efficiency: float,
        fixed_r: float | None = None,
        chunk_size: int = 25,
        ess_fraction: float = ESS_RESAMPLE_FRACTION,
    ):
        self.cloud = cloud
        self.rng = rng
        self.efficiency = efficiency
        self.fixed_r = fixed_r
        self.chunk_size = int(chunk_size)
        self.ess_fraction = ess_fraction
        self.samples_seen = 0
        self.resample_count = 0
        self._cache_version = -1
        self._exp2r = None
        self._expm2r = None

    def _coefficients(self):
        """(A, B) per particle, matching update_weights_batch bit for bit;
        only the exponentials are cached across chunks."""
        if self.cloud.dimensions == 1:
            return variance_coefficients(self.fixed_r, self.efficiency)
        if self._cache_version != self.cloud.version:
            r = self.cloud.r
            self._exp2r = np.exp(2.0 * r)
            self._expm2r = np.exp(-2.0 * r)
            self._cache_version = self.cloud.version
        a = self.efficiency * self._expm2r + 1.0 - self.efficiency
        return a, self._exp2r

    def observe_batch(self, xs, theta):
        """Consume one batch at a fixed LO angle, chunked, with resampling."""
        xs = np.asarray(xs, dtype=float)
        if not np.all(np.isfinite(xs)):
            raise ValueError("samples must be finite")
        n_cloud = self.cloud.n_particles
        for start in range(0, xs.size, self.chunk_size):
            chunk = xs[start : start + self.chunk_size]
            a, b = self._coefficients()
            cos2t = np.cos(2.0 * (self.cloud.phi - theta))
            var = ((a + b) - (b - a) * cos2t) / 8.0
            log_lik = -0.5 * chunk.size * np.log(2.0 * math.pi * var) - float(chunk @ chunk) / (2.0 * var)
            _apply_log_likelihood(self.cloud, log_lik)
            self.samples_seen += chunk.size
            if effective_sample_size(self.cloud) < self.ess_fraction * n_cloud:
                resample(self.cloud, self.rng)
                self.resample_count += 1
