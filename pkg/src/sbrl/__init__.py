"""Scenario-based modeling engine with reward shaping for reinforcement learning."""

from .dsl import ParseError, avoid_k_in_a_row, parse_scenario, parse_scenarios, render, water_tap_model
from .engine import (
    ALL,
    NONE,
    Event,
    EventSet,
    Execution,
    FirstEnabled,
    Priority,
    ScenarioProgram,
    SeededRandom,
    SyncDeclaration,
)
from .netsim import Action, LinkConfig, LinkEnv
from .shaping import ActionMap, PenaltyConfig, ShapedEnv, shape_reward, shaped_step
from .trainer import Discretizer, QTable, TrainLog, count_violations, discounted_return, train

__all__ = [
    "ALL",
    "NONE",
    "Action",
    "ActionMap",
    "Discretizer",
    "Event",
    "EventSet",
    "Execution",
    "FirstEnabled",
    "LinkConfig",
    "LinkEnv",
    "ParseError",
    "PenaltyConfig",
    "Priority",
    "QTable",
    "ScenarioProgram",
    "SeededRandom",
    "ShapedEnv",
    "SyncDeclaration",
    "TrainLog",
    "avoid_k_in_a_row",
    "count_violations",
    "discounted_return",
    "parse_scenario",
    "parse_scenarios",
    "render",
    "shape_reward",
    "shaped_step",
    "train",
    "water_tap_model",
]

__version__ = "0.1.0"
