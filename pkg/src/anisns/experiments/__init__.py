"""Configuration, Monte Carlo drivers and reports."""

from .config import DEFAULTS, ConfigError, ExperimentConfig
from .harness import (
    Context,
    identity_checks,
    run_clt_limit,
    run_clt_rate,
    run_invariant_suite,
    run_mdp_tail,
    run_simulate,
    sample_seed,
)
from .report import ExperimentReport, fit_slope, sanitize, summarize

__all__ = [
    "DEFAULTS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "Context",
    "identity_checks",
    "run_clt_limit",
    "run_clt_rate",
    "run_invariant_suite",
    "run_mdp_tail",
    "run_simulate",
    "sample_seed",
    "fit_slope",
    "sanitize",
    "summarize",
]
