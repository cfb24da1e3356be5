"""Benchmark harness: methods across availability regimes, Pareto analysis, reports."""
from .experiment import (
    ComponentError, MethodResult, MethodSpec, TrialRecord, check_spec, default_methods, evaluate, run_experiment,
)
from .pareto import ParetoPoint, dominates, pareto_front, summarize
from .regimes import AvailabilityRegime, GroupAccess, RegimeViolation, minimal_regime
from .report import frontier_rows, load_results_csv, report, summaries, write_results_csv

__all__ = [
    "AvailabilityRegime", "ComponentError", "GroupAccess", "MethodResult", "MethodSpec", "ParetoPoint",
    "RegimeViolation", "TrialRecord", "check_spec", "default_methods", "dominates", "evaluate", "frontier_rows",
    "load_results_csv", "minimal_regime", "pareto_front", "report", "run_experiment", "summaries", "summarize",
    "write_results_csv",
]
