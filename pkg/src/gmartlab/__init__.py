"""Monte Carlo and PDE laboratory for symmetric G-martingales: paths, stochastic
integrals, local time, upper expectations and numerical checks."""

from .errors import (
    CapacityError,
    ConfigError,
    CoverageError,
    DiagnosticError,
    DomainError,
    GmartError,
    GridMismatchError,
    InvalidArgument,
)
from .model import (
    BangBang,
    Constant,
    Feedback,
    PiecewiseDeterministic,
    RandomSwitching,
    StrategyFamily,
    TimeGrid,
    VolatilityBand,
    default_strategy_family,
    make_uniform_grid,
)
from .paths import PathBundle, Probe, simulate_paths, sweep

__version__ = "0.1.0"

__all__ = [
    "BangBang", "CapacityError", "ConfigError", "Constant", "CoverageError", "DiagnosticError", "DomainError",
    "Feedback", "GmartError", "GridMismatchError", "InvalidArgument", "PathBundle", "PiecewiseDeterministic",
    "Probe", "RandomSwitching", "StrategyFamily", "TimeGrid", "VolatilityBand", "default_strategy_family",
    "make_uniform_grid", "simulate_paths", "sweep",
]
