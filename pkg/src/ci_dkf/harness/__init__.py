"""Scenario files, Monte Carlo experiments and result output."""

from .experiment import (ExperimentResult, PeriodicityReport, consistency_violations, emit_csv,
                         emit_plot, periodicity_report, run_experiment, write_csv)
from .scenario import BUNDLED, Scenario, load_scenario, scenario_from_dict, scenario_hash

__all__ = [
    "BUNDLED", "ExperimentResult", "PeriodicityReport", "Scenario", "consistency_violations",
    "emit_csv", "emit_plot", "load_scenario", "periodicity_report", "run_experiment",
    "scenario_from_dict", "scenario_hash", "write_csv",
]
