"""Experiment harness: configs, sweep orchestration, reports and the CLI."""

from pulsefocus.harness.config import ExperimentConfig, Kind, from_mapping, load_config, loads_config
from pulsefocus.harness.report import canonical_json, emit_report, load_report
from pulsefocus.harness.runner import ExperimentReport, run_experiment

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "Kind",
    "canonical_json",
    "emit_report",
    "from_mapping",
    "load_config",
    "load_report",
    "loads_config",
    "run_experiment",
]
