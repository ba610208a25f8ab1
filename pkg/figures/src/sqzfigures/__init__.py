"""Figure pipeline for sqzadapt campaign reports."""

__version__ = "0.1.0"

from .pipeline import (
    ReportFrame,
    ReportLoadError,
    UsageError,
    load_report,
    render_polar,
    render_robustness,
    render_scaling,
    render_to_file,
)

__all__ = [
    "ReportFrame",
    "ReportLoadError",
    "UsageError",
    "load_report",
    "render_polar",
    "render_robustness",
    "render_scaling",
    "render_to_file",
    "__version__",
]
