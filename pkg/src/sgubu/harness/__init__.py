"""Experiment harness: configuration, drivers, verification suites and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import run_bias_sweep, run_blr, run_spike_table
from .io import CSV_HEADER, SweepResult, format_rows, write_csv
from .verify import run_verify

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ExperimentConfig",
    "SweepResult",
    "format_rows",
    "load_config",
    "run_bias_sweep",
    "run_blr",
    "run_spike_table",
    "run_verify",
    "write_csv",
]
