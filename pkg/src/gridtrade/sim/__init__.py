"""Deterministic discrete-event simulator for the trading protocol."""

from .config import ScenarioConfig, parse_config, format_config
from .metrics import Metrics, Verdict
from .scenarios import SCENARIOS, ScenarioResult, preset, run_scenario
from .world import World

__all__ = [
    "Metrics",
    "SCENARIOS",
    "ScenarioConfig",
    "ScenarioResult",
    "Verdict",
    "World",
    "format_config",
    "parse_config",
    "preset",
    "run_scenario",
]
