"""Downlink multi-TRP system-level simulator.

Compares single-TRP transmission, dynamic point selection (with dynamic
point blanking) and non-coherent joint transmission under FTP Model 1
traffic in indoor and dense-urban layouts at 4 GHz and 30 GHz.
"""

from .config import SimConfig, RunConfig, ConfigError, load_config, preset_config
from .engine import (CalibrationError, RunResult, Simulation, UnderRunError, calibrate_ru, run,
                     run_many)
from .metrics import RunSummary, gains, percentile, pool
from .scenario import ScenarioKind
from .scheduler import SchemeMode

__all__ = [
    "SimConfig", "RunConfig", "ConfigError", "load_config", "preset_config",
    "CalibrationError", "RunResult", "Simulation", "UnderRunError", "calibrate_ru", "run",
    "run_many", "RunSummary", "gains", "percentile", "pool", "ScenarioKind", "SchemeMode",
]
