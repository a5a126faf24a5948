"""Local Volt-VAR control on unbalanced radial feeders.

Extremum seeking tunes each inverter's droop reference from local
measurements; a backward/forward sweep solver and a quasi-static time-series
engine evaluate it against a fixed droop curve and a brute-force dispatch.
"""

from .control import ControllerParams, controller_step, droop_eval, es_step, new_controller, sse_update
from .feeder import FeederError, FeederModel, load_feeder, save_feeder
from .powerflow import build_injections, solve
from .scenario import ScenarioConfig, brute_force_dispatch, run_qsts

__all__ = [
    "ControllerParams", "FeederError", "FeederModel", "ScenarioConfig", "brute_force_dispatch",
    "build_injections", "controller_step", "droop_eval", "es_step", "load_feeder", "new_controller",
    "run_qsts", "save_feeder", "solve", "sse_update",
]
__version__ = "0.1.0"
