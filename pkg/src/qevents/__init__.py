"""Simulation of detector clicks in event-enhanced quantum theory.

Click times and detector choices are generated by a piecewise deterministic
process: a damped wave-function flow whose norm loss gives the click
probability, interrupted by random jumps. Nonrelativistic, proper-time and
Dirac (indefinite metric) engines share the same process core.
"""
from .config import ConfigError, ExperimentConfig, load_config, validate_dict
from .detectors import DetectorSpec
from .experiment import RunSummary, run_experiment
from .grids import Grid1D, Grid2D, PotentialSpec, ScalarField2D, SpinorField2D, WaveFunction1D
from .liouville import DensityPair, MasterEquation
from .nonrel import NonrelConfig, NonrelEngine, find_jump_time, run_trajectory
from .pdp import SCHEMA_VERSION, TrajectoryRecord
from .propertime import ProperTimeConfig, ProperTimeEngine
from .relativistic import RelConfig, RelEngine
from .report import report
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DensityPair", "DetectorSpec", "ExperimentConfig", "Grid1D", "Grid2D", "MasterEquation",
    "NonrelConfig", "NonrelEngine", "PotentialSpec", "ProperTimeConfig", "ProperTimeEngine", "RelConfig",
    "RelEngine", "RngStream", "RunSummary", "SCHEMA_VERSION", "ScalarField2D", "SpinorField2D",
    "TrajectoryRecord", "WaveFunction1D", "find_jump_time", "load_config", "report", "run_experiment",
    "run_trajectory", "validate_dict",
]
