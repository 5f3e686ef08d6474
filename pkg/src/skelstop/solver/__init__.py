"""Stopping solvers: regression Monte Carlo, exact oracle, bounds and planning."""
from .bounds import BoundReport, error_bound_report
from .ls import (LsConfig, LsResult, apply_rule, cascade_payoffs, fitted_rule,
                 lower_bound_estimate, ls_solve, markov_compressor)
from .oracle import OracleResult, classify_regions, oracle_dp, variational_check
from .planner import DYADIC, LevelFamily, Plan, plan_resolution
from .probe import ProbeReport, lipschitz_probe

__all__ = [
    "BoundReport", "error_bound_report", "LsConfig", "LsResult", "apply_rule",
    "cascade_payoffs", "fitted_rule", "lower_bound_estimate", "ls_solve",
    "markov_compressor", "OracleResult", "classify_regions", "oracle_dp",
    "variational_check", "DYADIC", "LevelFamily", "Plan", "plan_resolution",
    "ProbeReport", "lipschitz_probe",
]
