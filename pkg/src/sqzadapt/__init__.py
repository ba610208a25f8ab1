"""Adaptive Bayesian homodyne phase estimation with squeezed vacuum probes."""

__version__ = "0.1.0"

from .model import (
    ProbeParams,
    SHOT_NOISE_VARIANCE,
    db_to_variance,
    draw_sample,
    draw_samples,
    effective_squeezing,
    effective_squeezing_from_variances,
    likelihood_pdf,
    quadrature_variance,
    variance_to_db,
)

__all__ = [
    "ProbeParams",
    "SHOT_NOISE_VARIANCE",
    "db_to_variance",
    "draw_sample",
    "draw_samples",
    "effective_squeezing",
    "effective_squeezing_from_variances",
    "likelihood_pdf",
    "quadrature_variance",
    "variance_to_db",
    "__version__",
]
