"""Robust multi-period dispatch of batteries and solar inverters on unbalanced radial feeders."""

from .controller import RunConfig, RunLog, ViolationStats, metrics, run_closed_loop
from .feeder import FeederModel, TimeSeries, load_feeder, load_series, save_feeder, save_series
from .loadflow import LoadFlowResult, NetworkState, linearize, solve_loadflow
from .recovery import FeasibleOperatingPoint, recover, recover_all
from .socp import DispatchSchedule, SocpSolution, SolverConfig, build_program, solve_socp
from .tightening import (
    RobustConfig,
    SensitivityMatrix,
    TightenedBounds,
    compute_sensitivities,
    safety_factor,
    tighten,
    uncertainty_margin,
)
from .uncertainty import UncertaintyModel, covariance_at, refresh_schedule, sample_realization

__all__ = [
    "DispatchSchedule",
    "FeasibleOperatingPoint",
    "FeederModel",
    "LoadFlowResult",
    "NetworkState",
    "RobustConfig",
    "RunConfig",
    "RunLog",
    "SensitivityMatrix",
    "SocpSolution",
    "SolverConfig",
    "TightenedBounds",
    "TimeSeries",
    "UncertaintyModel",
    "ViolationStats",
    "build_program",
    "compute_sensitivities",
    "covariance_at",
    "linearize",
    "load_feeder",
    "load_series",
    "metrics",
    "recover",
    "recover_all",
    "refresh_schedule",
    "run_closed_loop",
    "safety_factor",
    "sample_realization",
    "save_feeder",
    "save_series",
    "solve_loadflow",
    "solve_socp",
    "tighten",
    "uncertainty_margin",
]
