"""Experiment orchestration, statistics, verification battery and result I/O."""

from .battery import CHECKS, resolve_checks, run_theory_battery
from .experiments import (
    ExperimentConfig, beta_tilde_batch, beta_tilde_constant, beta_tilde_sample,
    run_distribution_experiment, run_sweep, sample_descendants,
)
from .results import ResultRow, ResultTable, VerificationReport, read_results, write_results
from .stats import chi_square, two_sample_ks

__all__ = [
    "CHECKS", "ExperimentConfig", "ResultRow", "ResultTable", "VerificationReport",
    "beta_tilde_batch", "beta_tilde_constant", "beta_tilde_sample", "chi_square",
    "read_results", "resolve_checks", "run_distribution_experiment", "run_sweep",
    "run_theory_battery", "sample_descendants", "two_sample_ks", "write_results",
]
