"""Scenario harness: configuration, federation builder, experiments, CSV reports."""

from fedmec.harness.config import ScenarioConfig, default_config, load_config
from fedmec.harness.scenarios import (
    LatencyReport,
    emit_report,
    run_all_auth,
    run_auth_scenario,
    run_breakdown,
    run_interruption,
    run_state_sweep,
)
from fedmec.harness.topology import Federation, build_federation

__all__ = [
    "Federation", "LatencyReport", "ScenarioConfig", "build_federation", "default_config", "emit_report",
    "load_config", "run_all_auth", "run_auth_scenario", "run_breakdown", "run_interruption", "run_state_sweep",
]
