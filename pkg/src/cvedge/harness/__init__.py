"""Scenario configuration, deterministic execution and metrics reporting."""

from .engine import Engine, RunResult, run_scenario, run_sweep
from .metrics import (
    CSV_COLUMNS,
    ClassStats,
    LatencySample,
    MetricsCollector,
    MetricsReport,
    emit_report,
    quartiles,
    render_csv,
    summarize,
    throughput_mbps,
)
from .scenario import Scenario, ScenarioError

__all__ = [
    "CSV_COLUMNS",
    "ClassStats",
    "Engine",
    "LatencySample",
    "MetricsCollector",
    "MetricsReport",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "emit_report",
    "quartiles",
    "render_csv",
    "run_scenario",
    "run_sweep",
    "summarize",
    "throughput_mbps",
]
