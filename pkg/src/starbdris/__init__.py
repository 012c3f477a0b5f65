"""Sum-rate optimization for active dual-zone surface-aided downlinks."""

from .driver import AoResult, SolverConfig, run_ao, run_passive_baseline
from .model import Precoder, RisState
from .scenario import (GeometryConfig, NoiseConfig, PowerConfig, Scenario,
                       SystemDims, build_scenario)

__all__ = [
    "AoResult", "SolverConfig", "run_ao", "run_passive_baseline",
    "Precoder", "RisState", "GeometryConfig", "NoiseConfig", "PowerConfig",
    "Scenario", "SystemDims", "build_scenario",
]
