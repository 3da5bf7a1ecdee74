"""Deterministic simulation harness.

Scenarios are declarative text files driving synthetic riders, drivers, and
admins against a real in-process service instance under virtual time; runs
are reproducible byte-for-byte given (scenario, seed).
"""

from .analysis import assert_exactly_once, assert_fifo, compute_metrics
from .runner import ScenarioError, Transcript, run_scenario
from .scenario import Scenario, list_bundled, load_scenario, parse_scenario

__all__ = [
    "Scenario",
    "ScenarioError",
    "Transcript",
    "assert_exactly_once",
    "assert_fifo",
    "compute_metrics",
    "list_bundled",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]
