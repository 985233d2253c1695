"""Multi-microgrid black-start restoration with inrush-aware switching."""
from .config import MilpConfig, RunConfig, SolverOptions
from .controller import ControllerError, RestorationLog, inrush_check, run
from .feeder import Feeder, FeederError, Scenario, load_scenario, parse_feeder, validate_feeder, validate_scenario
from .inrush import InrushReport, MicrogridState, evaluate_step, peak_inrush, worst_case_angle
from .solver import Solution, SolverError, solve

__version__ = "0.1.0"

__all__ = [
    "ControllerError",
    "Feeder",
    "FeederError",
    "InrushReport",
    "MicrogridState",
    "MilpConfig",
    "RestorationLog",
    "RunConfig",
    "Scenario",
    "Solution",
    "SolverError",
    "SolverOptions",
    "evaluate_step",
    "inrush_check",
    "load_scenario",
    "parse_feeder",
    "peak_inrush",
    "run",
    "solve",
    "validate_feeder",
    "validate_scenario",
    "worst_case_angle",
]
