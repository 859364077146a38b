"""Scenario-driven orchestration and the command-line interface."""
from .runner import RunFailure, RunReport, render_text, run_scenario
from .scenario import Scenario, ScenarioError, bundled_scenario, load_scenario, scenario_from_dict

__all__ = [
    "RunFailure", "RunReport", "render_text", "run_scenario", "Scenario", "ScenarioError",
    "bundled_scenario", "load_scenario", "scenario_from_dict",
]
