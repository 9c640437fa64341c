"""Experiment orchestration, reporting and the command-line interface."""

from .config import ExperimentConfig, desk_scale, preset, with_overrides
from .experiment import (
    ExperimentRun,
    RunPaths,
    compare_methods,
    individual_errors,
    noise_sweep,
    run_and_compare,
    run_experiment,
)
from .report import CSV_HEADER, ComparisonReport, ReportRow, emit_report, load_report
