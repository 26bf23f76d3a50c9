"""Solubility, supersaturation and growth-rate laws.

Everything here is written against :mod:`popbal.autodiff` primitives so the
same code runs on floats, dual numbers and taped values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import ConfigError, LiquidState, MaterialProperties

KELVIN = 273.15


def solubility(T, material: MaterialProperties):
    """c*(T) = a exp(b T), in g/kg."""
    return material.solubility_a * ad.exp(material.solubility_b * T)


def supersaturation(state: LiquidState, material: MaterialProperties):
    return state.c / solubility(state.T, material)


def _excess(S):
    """S - 1, or None where growth is switched off (S <= 1)."""
    if ad.primal(S) <= 1.0:
        return None
    return S - 1.0


@dataclass(frozen=True)
class ArrheniusGrowth:
    """G_m = k1 exp(-k2 / (T + 273.15)) (S - 1)^k3, one (k1, k2, k3) per axis."""

    k1: tuple = (8.86e6, 4.088e5)  # um/min
    k2: tuple = (2.45e3, 2.4e3)  # K
    k3: tuple = (3.7, 2.5)

    def __post_init__(self):
        for m in range(2):
            if not ad.primal(self.k1[m]) > 0 or not ad.primal(self.k3[m]) > 0:
                raise ConfigError("Arrhenius k1 and k3 must be positive")

    @property
    def kind(self) -> str:
        return "arrhenius"

    def rate(self, m: int, S, T):
        if m not in (1, 2):
            raise ValueError(f"dimension index must be 1 or 2, got {m}")
        x = _excess(S)
        if x is None:
            return 0.0
        i = m - 1
        arr = self.k1[i] * ad.exp(-self.k2[i] / (T + KELVIN))
        return arr * ad.exp(self.k3[i] * ad.log(x))


@dataclass(frozen=True)
class PolynomialGrowth:
    """G_m = sum_j a_j (S - 1)^j, j = 1..k.

    ``coeffs`` drives both axes unless ``coeffs_L2`` is given.  Coefficients
    may be traced vectors (``Dual``/``Var``), which is how the estimator
    differentiates the simulation.
    """

    coeffs: object = (1.0,)
    coeffs_L2: object = None
    _check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self._check:
            return
        for c in (self.coeffs, self.coeffs_L2):
            if c is None:
                continue
            vals = np.atleast_1d(np.asarray(ad.primal(c), dtype=float))
            if vals.size < 1:
                raise ConfigError("polynomial growth needs at least one coefficient")
            if np.any(vals < 0):
                raise ConfigError("polynomial coefficients must be non-negative")

    @property
    def kind(self) -> str:
        return "polynomial"

    @property
    def k(self) -> int:
        return int(np.size(ad.primal(self.coeffs)))

    def _coeffs(self, m):
        c = self.coeffs if (m == 1 or self.coeffs_L2 is None) else self.coeffs_L2
        if not ad.is_traced(c):
            c = np.atleast_1d(np.asarray(c, dtype=float))
        return c

    def rate(self, m: int, S, T=None):
        if m not in (1, 2):
            raise ValueError(f"dimension index must be 1 or 2, got {m}")
        x = _excess(S)
        if x is None:
            return 0.0
        a = self._coeffs(m)
        powers = ad.power(x, np.arange(1, np.size(ad.primal(a)) + 1, dtype=float))
        return ad.sum(a * powers)


GrowthLaw = ArrheniusGrowth | PolynomialGrowth


def growth_rate(law, m: int, S, T):
    """Growth rate along axis ``m`` (1 or 2) in um/min; exactly 0 for S <= 1."""
    return law.rate(m, S, T)
