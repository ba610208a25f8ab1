"""Gaussian statistics of homodyne detection on a lossy squeezed vacuum state.

A homodyne measurement at local-oscillator phase theta on a squeezed vacuum
state with phase phi, squeezing r and transmission eta yields a zero-mean
Gaussian sample whose variance depends only on the relative angle
``phi_rel = phi - theta``:

    sigma^2(phi_rel, r, eta)
        = (1/4) * (eta * exp(-2r) * cos^2(phi_rel)
                   + (1 - eta) * cos^2(phi_rel)
                   + exp(2r) * sin^2(phi_rel))

All quadrature values in this package are expressed in shot-noise units where
the vacuum variance is exactly 1/4; noise powers in dB are referenced to that
level (0 dB == 0.25). The variance is pi-periodic and even in ``phi_rel``;
angles are folded into [-pi/2, pi/2] by an exact IEEE remainder before any
trigonometry so that the symmetry holds to machine precision.

The anti-squeezed term ``exp(2r) sin^2`` is deliberately not attenuated by
eta; the loss acts on the squeezed quadrature only, mixing it with vacuum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SHOT_NOISE_VARIANCE = 0.25

TWO_PI = 2.0 * math.pi


def _require_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def _require_physical(squeezing, efficiency):
    _require_finite(squeezing=squeezing, efficiency=efficiency)
    if squeezing < 0:
        raise ValueError(f"squeezing must be >= 0, got {squeezing}")
    if not 0 < efficiency <= 1:
        raise ValueError(f"efficiency must be in (0, 1], got {efficiency}")


@dataclass(frozen=True)
class ProbeParams:
    """Physical truth of one probe: phase in [0, pi), squeezing >= 0, efficiency in (0, 1]."""

    phase: float
    squeezing: float
    efficiency: float

    def __post_init__(self):
        _require_finite(phase=self.phase)
        _require_physical(self.squeezing, self.efficiency)
        if not 0 <= self.phase < math.pi:
            raise ValueError(f"phase must lie in [0, pi), got {self.phase}")


def reduce_lo_phase(theta: float) -> float:
    """Reduce a local-oscillator phase to [0, 2*pi)."""
    _require_finite(theta=theta)
    return theta % TWO_PI


def fold_relative_angle(phi_rel: float) -> float:
    """Fold a relative angle into [-pi/2, pi/2] using the exact IEEE remainder.

    The quadrature variance is pi-periodic and even, so the fold is loss-free
    for the variance; the sign of the folded angle preserves the sign of the
    phase derivative.
    """
    _require_finite(phi_rel=phi_rel)
    return math.remainder(phi_rel, math.pi)


def variance_coefficients(squeezing, efficiency):
    """Return (A, B) with sigma^2 = (A cos^2 + B sin^2)/4.

    A collects the squeezed-plus-vacuum part ``eta e^(-2r) + 1 - eta`` and B
    the anti-squeezed part ``e^(2r)``. Works elementwise on arrays of
    squeezing values.
    """
    a = efficiency * np.exp(-2.0 * squeezing) + 1.0 - efficiency
    b = np.exp(2.0 * squeezing)
    return a, b


def quadrature_variance(phi_rel: float, squeezing: float, efficiency: float) -> float:
    """Variance of the homodyne outcome at relative angle ``phi_rel``.

    Strictly positive; equals 1/4 for vacuum (r=0) at any angle.
    """
    _require_physical(squeezing, efficiency)
    t = fold_relative_angle(phi_rel)
    a, b = variance_coefficients(squeezing, efficiency)
    c, s = math.cos(t), math.sin(t)
    return (a * c * c + b * s * s) / 4.0


def log_likelihood(x: float, phi_rel: float, squeezing: float, efficiency: float) -> float:
    """Log of the zero-mean Gaussian homodyne density at x."""
    var = quadrature_variance(phi_rel, squeezing, efficiency)
    _require_finite(x=x)
    return -0.5 * math.log(TWO_PI * var) - x * x / (2.0 * var)


def likelihood_pdf(x: float, phi_rel: float, squeezing: float, efficiency: float) -> float:
    """Homodyne outcome density: zero-mean Gaussian with the model variance."""
    return math.exp(log_likelihood(x, phi_rel, squeezing, efficiency))


def draw_samples(rng: np.random.Generator, probe: ProbeParams, theta: float, count: int) -> np.ndarray:
    """Draw ``count`` homodyne samples at LO phase theta from the probe truth.

    The stream is a pure function of the generator state, so a fixed seed
    reproduces the sequence byte for byte.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    var = quadrature_variance(probe.phase - theta, probe.squeezing, probe.efficiency)
    return rng.normal(0.0, math.sqrt(var), size=count)


def draw_sample(rng: np.random.Generator, probe: ProbeParams, theta: float) -> float:
    """Draw a single homodyne sample (see draw_samples)."""
    return float(draw_samples(rng, probe, theta, 1)[0])


def db_to_variance(db: float) -> float:
    """Convert a noise power in dB relative to shot noise into a variance."""
    _require_finite(db=db)
    return SHOT_NOISE_VARIANCE * 10.0 ** (db / 10.0)


def variance_to_db(variance: float) -> float:
    """Convert a variance in shot-noise units into dB relative to shot noise."""
    _require_finite(variance=variance)
    if variance <= 0:
        raise ValueError(f"variance must be > 0, got {variance}")
    return 10.0 * math.log10(variance / SHOT_NOISE_VARIANCE)


def effective_squeezing_from_variances(antisqueezed_variance: float, squeezed_variance: float) -> float:
    """Effective squeezing from measured extremal variances.

    r_eff = (1/2) log(v_asqz / sqrt(v_asqz * v_sqz)) = (1/4) log(v_asqz / v_sqz).
    Zero when both variances coincide.
    """
    if antisqueezed_variance <= 0 or squeezed_variance <= 0:
        raise ValueError("variances must be > 0")
    return 0.25 * math.log(antisqueezed_variance / squeezed_variance)


def effective_squeezing(squeezing: float, efficiency: float) -> float:
    """Single parameter capturing squeezing plus loss.

    Computed from the model's extremal variances at relative angles pi/2 and
    0. Satisfies r_eff <= r with equality iff efficiency == 1.
    """
    _require_physical(squeezing, efficiency)
    v_sqz = quadrature_variance(0.0, squeezing, efficiency)
    v_asqz = quadrature_variance(math.pi / 2.0, squeezing, efficiency)
    return effective_squeezing_from_variances(v_asqz, v_sqz)
