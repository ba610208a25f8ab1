"""Fisher information geometry of lossy squeezed-vacuum homodyne detection.

For a zero-mean Gaussian outcome with variance sigma^2(y) the per-measurement
Fisher information matrix reduces to the rank-one form

    F_ij = (d sigma^2/d y_i)(d sigma^2/d y_j) / (2 sigma^4),

so a single LO setting can never resolve phase and squeezing jointly: the
2x2 matrix is an outer product and its determinant is identically zero.
Mixing several settings (the rough stage plus an adaptive fine stage) restores
invertibility; ``composite_fi_matrix`` models that measurement allocation.

Closed forms used by the adaptive feedback:

* single-parameter optimum       phi_opt = arccos(tanh(2 r_eff)) / 2
* phase/squeezing decorrelation  arccos(e^(2r) / sqrt(e^(4r) + eta))

Both follow from the gradient of the variance model. A useful identity,
verified in the tests: the maximum of F_phiphi over the relative angle equals
2 sinh^2(2 r_eff) for every efficiency, i.e. the effective-squeezing quantum
bound is attainable by homodyne detection alone.

``fi_matrix_numeric`` evaluates the defining integral of F_ij by adaptive
quadrature with finite-difference log-derivatives. It shares no code with the
analytic path and serves as the reference oracle (and as the only route to
the 3x3 matrix that includes the efficiency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import (
    ProbeParams,
    effective_squeezing,
    fold_relative_angle,
    quadrature_variance,
    variance_coefficients,
)

CONDITION_LIMIT = 1e12


class SingularInformationError(RuntimeError):
    """Raised when an information matrix is too ill-conditioned to invert."""


def variance_gradient(phi_rel: float, squeezing: float, efficiency: float):
    """Return (d var/d phi, d var/d r, var) at the given relative angle.

    The fold preserves the sign of the odd phase derivative.
    """
    t = fold_relative_angle(phi_rel)
    a, b = variance_coefficients(squeezing, efficiency)
    c, s = math.cos(t), math.sin(t)
    var = (a * c * c + b * s * s) / 4.0
    dvar_dphi = (b - a) * s * c / 2.0
    da = -2.0 * efficiency * math.exp(-2.0 * squeezing)
    db = 2.0 * math.exp(2.0 * squeezing)
    dvar_dr = (da * c * c + db * s * s) / 4.0
    return dvar_dphi, dvar_dr, var


def fi_matrix_single_setting(probe: ProbeParams, theta: float) -> np.ndarray:
    """Per-measurement 2x2 FI over (phase, squeezing) at one LO setting.

    Built as an outer product of the variance gradient, hence exactly rank
    one: the determinant vanishes analytically for every parameter point.
    """
    dphi, dr, var = variance_gradient(probe.phase - theta, probe.squeezing, probe.efficiency)
    g = np.array([dphi, dr])
    return np.outer(g, g) / (2.0 * var * var)


def composite_fi_matrix(
    probe: ProbeParams,
    theta_fine: float,
    m_rough: int,
    m_total: int,
    rough_angles,
) -> np.ndarray:
    """FI matrix of the two-stage allocation: rough settings plus a fine one.

    Weighted average of single-setting matrices, m_rough/m_total spread evenly
    over the rough angles and the remainder at theta_fine. Generically rank 2
    and invertible for r > 0.
    """
    rough_angles = list(rough_angles)
    if not rough_angles:
        raise ValueError("rough_angles must be non-empty")
    if not 0 < m_rough <= m_total:
        raise ValueError(f"need 0 < m_rough <= m_total, got {m_rough}, {m_total}")
    rough = sum(fi_matrix_single_setting(probe, th) for th in rough_angles) / len(rough_angles)
    fine = fi_matrix_single_setting(probe, theta_fine)
    w_rough = m_rough / m_total
    return w_rough * rough + (1.0 - w_rough) * fine


def invert_information(matrix: np.ndarray, cond_limit: float = CONDITION_LIMIT) -> np.ndarray:
    """Invert an information matrix, refusing ill-conditioned input.

    Singularity is reported via SingularInformationError instead of returning
    a garbage inverse.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise SingularInformationError("information matrix has non-finite entries")
    cond = np.linalg.cond(matrix)
    if not math.isfinite(cond) or cond > cond_limit:
        raise SingularInformationError(f"information matrix condition number {cond:.3e} exceeds {cond_limit:.1e}")
    return np.linalg.inv(matrix)


def qfi_matrix(squeezing: float) -> np.ndarray:
    """Quantum FI matrix of the pure squeezed-vacuum model: diag(2 sinh^2(2r), 2)."""
    if squeezing < 0:
        raise ValueError(f"squeezing must be >= 0, got {squeezing}")
    return np.diag([2.0 * math.sinh(2.0 * squeezing) ** 2, 2.0])


def optimal_angle_single(r_eff: float) -> float:
    """Relative angle maximizing the phase information: arccos(tanh(2 r_eff))/2.

    Decreases monotonically from pi/4 at r_eff=0 towards 0.
    """
    if r_eff < 0:
        raise ValueError(f"r_eff must be >= 0, got {r_eff}")
    return 0.5 * math.acos(math.tanh(2.0 * r_eff))


def decorrelation_angle(r_hat: float, efficiency: float) -> float:
    """Relative angle where the phase/squeezing FI cross term vanishes.

    arccos(e^(2r) / sqrt(e^(4r) + eta)); at this angle d var/d r = 0, so both
    F_phir and F_rr of the single-setting matrix are zero.
    """
    if r_hat < 0:
        raise ValueError(f"r_hat must be >= 0, got {r_hat}")
    if not 0 < efficiency <= 1:
        raise ValueError(f"efficiency must be in (0, 1], got {efficiency}")
    e2r = math.exp(2.0 * r_hat)
    return math.acos(e2r / math.sqrt(e2r * e2r + efficiency))


def weak_commutation_witness(squeezing: float) -> float:
    """Magnitude of the mean SLD commutator, 4 sinh(2r); zero iff r = 0.

    A nonzero value certifies that phase and squeezing cannot both attain
    their quantum bounds with one measurement.
    """
    if squeezing < 0:
        raise ValueError(f"squeezing must be >= 0, got {squeezing}")
    return 4.0 * math.sinh(2.0 * squeezing)


@dataclass(frozen=True)
class BoundSet:
    """Per-measurement variance bounds; divide by M for an M-sample run.

    ``crb_phase_adaptive``/``crb_squeezing_adaptive`` are None when the
    composite information matrix was absent or singular.
    ``qcrb_phase_coherent`` is the lossless coherent-probe bound at the same
    mean photon number and is inf for r = 0.
    """

    qcrb_phase_squeezed: float
    qcrb_phase_coherent: float
    crb_phase_adaptive: float | None
    crb_squeezing_adaptive: float | None
    mean_photon_number: float


def phase_bounds(squeezing: float, efficiency: float, composite: np.ndarray | None = None) -> BoundSet:
    """Collect the phase-estimation bounds for a probe.

    qcrb_phase_squeezed uses the effective squeezing (loss folded in);
    qcrb_phase_coherent deliberately is not loss-corrected.
    """
    r_eff = effective_squeezing(squeezing, efficiency)
    f_eff = 2.0 * math.sinh(2.0 * r_eff) ** 2
    qcrb_sqz = 1.0 / f_eff if f_eff > 0 else math.inf
    n_mean = math.sinh(squeezing) ** 2
    qcrb_coh = 1.0 / (4.0 * n_mean) if n_mean > 0 else math.inf
    crb_phi = crb_r = None
    if composite is not None:
        try:
            inverse = invert_information(composite)
        except SingularInformationError:
            pass
        else:
            crb_phi = float(inverse[0, 0])
            crb_r = float(inverse[1, 1])
    return BoundSet(
        qcrb_phase_squeezed=qcrb_sqz,
        qcrb_phase_coherent=qcrb_coh,
        crb_phase_adaptive=crb_phi,
        crb_squeezing_adaptive=crb_r,
        mean_photon_number=n_mean,
    )


# ---------------------------------------------------------------------------
# Numerical oracle: quadrature of the defining FI integral.
# ---------------------------------------------------------------------------

_PARAM_NAMES = ("phase", "squeezing", "efficiency")


def _log_pdf_at(x, probe_values, theta):
    phase, squeezing, efficiency = probe_values
    var = quadrature_variance(phase - theta, squeezing, efficiency)
    return -0.5 * math.log(2.0 * math.pi * var) - x * x / (2.0 * var)


def _log_derivative(x, probe_values, theta, index, step=1e-5):
    up = list(probe_values)
    down = list(probe_values)
    up[index] += step
    down[index] -= step
    return (_log_pdf_at(x, up, theta) - _log_pdf_at(x, down, theta)) / (2.0 * step)


def fi_matrix_numeric(
    probe: ProbeParams,
    theta: float,
    params=("phase", "squeezing"),
    step: float = 1e-5,
) -> np.ndarray:
    """FI matrix by adaptive quadrature of E[(d log p)(d log p)^T].

    Log-density derivatives are taken by central finite differences, so this
    path is independent of the analytic gradient and usable as an oracle.
    ``params`` may include "efficiency" for the 3x3 diagnostic form.
    """
    indices = [_PARAM_NAMES.index(p) for p in params]
    values = (probe.phase, probe.squeezing, probe.efficiency)
    sigma = math.sqrt(quadrature_variance(probe.phase - theta, probe.squeezing, probe.efficiency))
    width = 40.0 * sigma
    n = len(indices)
    out = np.zeros((n, n))

    def integrand(x, i, j):
        p = math.exp(_log_pdf_at(x, values, theta))
        gi = _log_derivative(x, values, theta, i, step)
        gj = gi if j == i else _log_derivative(x, values, theta, j, step)
        return p * gi * gj

    for a in range(n):
        for b in range(a, n):
            # integrand is even in x: integrate half line and double
            val, _ = quad(
                integrand,
                0.0,
                width,
                args=(indices[a], indices[b]),
                epsabs=1e-13,
                epsrel=1e-11,
                limit=200,
            )
            out[a, b] = out[b, a] = 2.0 * val
    return out
