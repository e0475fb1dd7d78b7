"""Experiment orchestration: configs, comparisons, reports and the CLI."""

from .compare import Estimate, Policy, Row, compare
from .config import ConfigError, ExperimentConfig, load_config, validate
from .experiments import run_experiment
from .report import ComparisonReport, emit_report

__all__ = ["ComparisonReport", "ConfigError", "Estimate", "ExperimentConfig", "Policy", "Row",
           "compare", "emit_report", "load_config", "run_experiment", "validate"]
