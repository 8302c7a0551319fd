"""Configured experiments, CSV reports and the acceptance suite."""

from .config import EXPERIMENTS, ExperimentConfig, data_dir, documented_keys  # noqa: F401
from .experiments import run_experiment  # noqa: F401
from .report import ExperimentReport, emit_csv, read_csv, to_csv_text  # noqa: F401
