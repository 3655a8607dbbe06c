from .harness import Metrics, RunResult, run_scenario, warm_start_model
from .scenario import (
    DriftSpec, FaultSpec, ScenarioConfig, ScenarioWarning,
    catalog_for_scenario, demo_scenario, drift_scenario, generate_stream,
    zero_fault_scenario,
)
from .report import CSV_COLUMNS, format_table, render_figures, report, write_csv

__all__ = [
    "Metrics", "RunResult", "run_scenario", "warm_start_model",
    "ScenarioConfig", "FaultSpec", "DriftSpec", "ScenarioWarning",
    "generate_stream", "demo_scenario", "zero_fault_scenario",
    "drift_scenario", "catalog_for_scenario",
    "CSV_COLUMNS", "write_csv", "format_table", "render_figures", "report",
]
