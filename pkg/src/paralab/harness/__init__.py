"""Experiment orchestration: config files, A/B runs, reports and figures."""

from .config import ExperimentConfig, load_config, parse_config
from .experiment import ComparisonReport, compare, run_experiment
from .figures import emit_figures

__all__ = ["ComparisonReport", "ExperimentConfig", "compare", "emit_figures", "load_config", "parse_config", "run_experiment"]
