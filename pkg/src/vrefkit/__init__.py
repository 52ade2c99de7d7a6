"""Analysis toolkit for a two-stage subthreshold CMOS voltage reference."""

from vrefkit.circuit import (
    CircuitConfig,
    ConfigurationError,
    ConvergenceError,
    ModelFlags,
    OperatingPoint,
    solve_full,
    solve_stage2_only,
)
from vrefkit.config import default_config, load_config

__all__ = [
    "CircuitConfig",
    "ConfigurationError",
    "ConvergenceError",
    "ModelFlags",
    "OperatingPoint",
    "default_config",
    "load_config",
    "solve_full",
    "solve_stage2_only",
]
__version__ = "0.1.0"
