"""Differentiable 2D population balance solver for batch crystallization."""

from .core import (
    ConfigError,
    Grid2D,
    LiquidState,
    MaterialProperties,
    PSSD,
    SeedSpec,
    SimulationConfig,
    build_grid,
)
from .kinetics import ArrheniusGrowth, PolynomialGrowth, growth_rate, solubility, supersaturation

__version__ = "0.1.0"

__all__ = [
    "ArrheniusGrowth",
    "ConfigError",
    "Grid2D",
    "LiquidState",
    "MaterialProperties",
    "PSSD",
    "PolynomialGrowth",
    "SeedSpec",
    "SimulationConfig",
    "build_grid",
    "growth_rate",
    "solubility",
    "supersaturation",
]
