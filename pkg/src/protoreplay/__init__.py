"""Continual regression with prototype-based pseudo-rehearsal."""
from .engine import ContinualRegressor, EngineConfig, StepReport, Strategy, init
from .errors import DimensionError, NumericalError, ParseError
from .evaluation import (
    ForgettingProtocol,
    degradation_index,
    forgetting_ratio,
    memory_report,
    mse,
    r2,
    run_clear_protocol,
    run_forgetting_experiment,
)
from .mdn import MdnConfig
from .memory import IlvqParams
from .rehearsal import RHO_GRID, RehearsalConfig
from .tree import TreeParams

__version__ = "0.1.0"

__all__ = [
    "ContinualRegressor", "EngineConfig", "StepReport", "Strategy", "init",
    "DimensionError", "NumericalError", "ParseError",
    "ForgettingProtocol", "degradation_index", "forgetting_ratio", "memory_report", "mse", "r2",
    "run_clear_protocol", "run_forgetting_experiment",
    "MdnConfig", "IlvqParams", "RHO_GRID", "RehearsalConfig", "TreeParams",
]
