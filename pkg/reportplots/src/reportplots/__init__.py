"""Render-only companion package: figures and reports from run tables."""

from .figures import FigureSpec, render
from .report import build_report, write_report
from .tables import (
    CONVERGENCE_HEADER,
    RESULTS_HEADER,
    TRAJECTORY_HEADER,
    TableError,
    load_convergence,
    load_manifest,
    load_results,
    load_trajectory,
)

__version__ = "0.1.0"
