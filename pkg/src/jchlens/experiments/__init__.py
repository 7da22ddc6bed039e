"""Experiment configs, runners and result files."""

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, config_from_dict, load_config
from .raytrace import Convention, resolve_convention
from .results import ExperimentResult, GuardBreach, load_report, write_result
from .runners import RUNNERS, run_experiment

__all__ = [
    "EXPERIMENTS",
    "RUNNERS",
    "ConfigError",
    "Convention",
    "ExperimentConfig",
    "ExperimentResult",
    "GuardBreach",
    "config_from_dict",
    "load_config",
    "load_report",
    "resolve_convention",
    "run_experiment",
    "write_result",
]
