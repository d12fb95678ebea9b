"""Experiment runner: sweeps, figure presets, CSV persistence, CLI."""

from .configfile import load_document
from .sweep import ResultRow, SweepSpec, compare_formulations, run_rho_curve, run_sweep

__all__ = [
    "SweepSpec",
    "ResultRow",
    "run_sweep",
    "run_rho_curve",
    "compare_formulations",
    "load_document",
]
