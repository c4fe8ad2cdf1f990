"""PMAC learning package."""

from .config import Settings
from .errors import PMACError
from .experiments import ExperimentService, list_experiments
from .models import (
    ChannelState,
    EquilibriumResult,
    FadingKind,
    FadingSpec,
    GameConfig,
    PowerProfile,
    StepSchedule,
    Trajectory,
)
from .parsers import Scenario, parse_scenario
from .repository import ResultRepository

__all__ = [
    "Settings",
    "PMACError",
    "ExperimentService",
    "list_experiments",
    "ChannelState",
    "EquilibriumResult",
    "FadingKind",
    "FadingSpec",
    "GameConfig",
    "PowerProfile",
    "StepSchedule",
    "Trajectory",
    "Scenario",
    "parse_scenario",
    "ResultRepository",
]
