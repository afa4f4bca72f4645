"""Experiment harness: configs, presets, seeded runs, metrics files and the CLI."""

from .config import PRESETS, ExperimentConfig, from_dict, load_config, preset
from .records import (
    CSV_COLUMNS,
    SCHEMA_VERSION,
    Comparison,
    RunRecord,
    StepRow,
    compare_runs,
    compute_aggregates,
    emit_metrics,
    load_run,
)
from .runner import run_experiment, run_seed
