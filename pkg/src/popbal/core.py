"""Domain types: grid, distribution, liquid phase, material and run settings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .kinetics import GrowthLaw


class ConfigError(ValueError):
    """Invalid construction arguments or configuration values."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2D size/shape grid; axis 0 is L1 (length), axis 1 is L2 (width)."""

    n1: int
    n2: int
    dL1: float
    dL2: float

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ConfigError("bin counts must be positive")
        if not (self.dL1 > 0 and self.dL2 > 0):
            raise ConfigError("bin widths must be positive")

    @property
    def L1_max(self) -> float:
        return self.n1 * self.dL1

    @property
    def L2_max(self) -> float:
        return self.n2 * self.dL2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def L1_centers(self) -> np.ndarray:
        return (np.arange(self.n1) + 0.5) * self.dL1

    @property
    def L2_centers(self) -> np.ndarray:
        return (np.arange(self.n2) + 0.5) * self.dL2

    @property
    def cell_area(self) -> float:
        return self.dL1 * self.dL2


def build_grid(L1_max: float, L2_max: float, dL1: float, dL2: float) -> Grid2D:
    """Grid covering at least ``L1_max x L2_max``; counts are rounded up."""
    for name, v in (("L1_max", L1_max), ("L2_max", L2_max), ("dL1", dL1), ("dL2", dL2)):
        if not v > 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    # guard against 1200/0.1 = 12000.000000000002 style round-off
    n1 = math.ceil(L1_max / dL1 - 1e-9)
    n2 = math.ceil(L2_max / dL2 - 1e-9)
    return Grid2D(max(n1, 1), max(n2, 1), float(dL1), float(dL2))


@dataclass
class PSSD:
    """Number density f[i, j] on ``grid`` (per um^2 per kg solvent)."""

    grid: Grid2D
    f: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.f)
        if shape != self.grid.shape:
            raise ConfigError(f"PSSD shape {shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid2D) -> "PSSD":
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True)
class LiquidState:
    c: float  # g / kg solvent
    T: float  # degC

    def __post_init__(self):
        if self.c < 0:
            raise ConfigError("concentration must be non-negative")


@dataclass(frozen=True)
class MaterialProperties:
    rho_c: float = 1.11e-12  # g / um^3
    k_v: float = math.pi / 4
    solubility_a: float = 3.37  # g / kg
    solubility_b: float = 0.036  # 1 / degC

    def __post_init__(self):
        if not self.rho_c > 0:
            raise ConfigError("crystal density must be positive")
        if not 0 < self.k_v <= 1:
            raise ConfigError("shape factor must lie in (0, 1]")

    @property
    def mass_factor(self) -> float:
        """rho_c * k_v, converts mu12 into crystal mass."""
        return self.rho_c * self.k_v


@dataclass(frozen=True)
class SeedSpec:
    shape: str = "normal"
    mean_L1: float = 400.0
    mean_L2: float = 250.0
    sigma_11: float = 30.0
    sigma_22: float = 30.0
    m0: float = 1.0  # g / kg solvent

    def __post_init__(self):
        if self.shape not in ("normal", "log-normal"):
            raise ConfigError(f"unknown seed shape {self.shape!r}")
        if not (self.sigma_11 > 0 and self.sigma_22 > 0):
            raise ConfigError("seed standard deviations must be positive")
        if self.m0 < 0:
            raise ConfigError("seed mass must be non-negative")
        if not (self.mean_L1 > 0 and self.mean_L2 > 0):
            raise ConfigError("seed mean lengths must be positive")


def _default_growth():
    from .kinetics import ArrheniusGrowth

    return ArrheniusGrowth()


@dataclass(frozen=True)
class SimulationConfig:
    """Everything one batch run needs.  Times are in minutes."""

    grid: Grid2D = field(default_factory=lambda: build_grid(1200, 600, 1, 1))
    seed: SeedSpec = field(default_factory=SeedSpec)
    material: MaterialProperties = field(default_factory=MaterialProperties)
    growth: "GrowthLaw" = field(default_factory=_default_growth)
    t_max: float = 60.0
    T: float = 15.0
    c0: float = 8.0
    courant_number: float = 0.9
    output_sampling: int = 101

    def __post_init__(self):
        if not 0 < self.courant_number < 1:
            raise ConfigError("Courant number must lie in (0, 1)")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.c0 < 0:
            raise ConfigError("initial concentration must be non-negative")
        if self.output_sampling < 2:
            raise ConfigError("output_sampling needs at least 2 points")

    @staticmethod
    def hours(t_hours: float) -> float:
        """Convert a duration given in hours to the internal minutes."""
        return 60.0 * t_hours

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.output_sampling)
