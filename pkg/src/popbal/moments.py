"""Method-of-moments reference solver.

Under size-independent growth the cross moments mu00, mu10, mu01, mu11, mu02,
mu12 together with the concentration form a closed ODE system.  It is
integrated with classical fixed-step RK4 and used to check FVM runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaterialProperties, SeedSpec
from .fvm import InfeasibleError, MOMENT_ORDERS, write_series_csv
from .kinetics import solubility

FIELDS = ("mu00", "mu10", "mu01", "mu11", "mu02", "mu12", "c")


@dataclass(frozen=True)
class MomentState:
    mu00: float
    mu10: float
    mu01: float
    mu11: float
    mu02: float
    mu12: float
    c: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in FIELDS], dtype=float)

    @classmethod
    def from_array(cls, y) -> "MomentState":
        return cls(*(float(v) for v in y))


@dataclass
class MomentTrace:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, 7) in FIELDS order

    def __getitem__(self, name: str) -> np.ndarray:
        return self.states[:, FIELDS.index(name)]

    @property
    def concentrations(self) -> np.ndarray:
        return self["c"]

    @property
    def crystal_volume(self) -> np.ndarray:
        return self["mu12"]

    @property
    def final(self) -> MomentState:
        return MomentState.from_array(self.states[-1])

    def sample(self, times) -> "MomentTrace":
        """Values at ``times`` by linear interpolation between RK4 nodes."""
        times = np.asarray(times, dtype=float)
        cols = [np.interp(times, self.times, self.states[:, i]) for i in range(len(FIELDS))]
        return MomentTrace(times, np.column_stack(cols))

    def to_csv(self, path) -> None:
        order = [FIELDS.index(f"mu{p}{q}") for p, q in MOMENT_ORDERS]
        rows = ([t, s[6]] + [s[i] for i in order] for t, s in zip(self.times, self.states))
        write_series_csv(path, rows)


def _rhs(y, T, law, material, cstar):
    mu00, mu10, mu01, mu11, mu02, mu12, c = y
    S = c / cstar
    G1 = float(law.rate(1, S, T))
    G2 = float(law.rate(2, S, T))
    dmu12 = G1 * mu02 + 2.0 * G2 * mu11
    return np.array(
        [
            0.0,
            G1 * mu00,
            G2 * mu00,
            G1 * mu01 + G2 * mu10,
            2.0 * G2 * mu01,
            dmu12,
            -material.mass_factor * dmu12,
        ]
    )


def mom_rhs(state: MomentState, T, law, material: MaterialProperties) -> MomentState:
    """d/dt of every moment and of the concentration."""
    cstar = float(solubility(T, material))
    return MomentState.from_array(_rhs(state.as_array(), T, law, material, cstar))


def mom_solve(
    initial: MomentState,
    T: float,
    law,
    material: MaterialProperties,
    t_max: float,
    n_steps: int = 10_000,
) -> MomentTrace:
    """Classical RK4 with ``n_steps`` equal steps; every node is kept."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    cstar = float(solubility(T, material))
    h = t_max / n_steps
    ys = np.empty((n_steps + 1, len(FIELDS)))
    y = initial.as_array()
    ys[0] = y

    def rhs(v):
        return _rhs(v, T, law, material, cstar)

    for n in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if y[6] < 0:
            raise InfeasibleError(f"concentration fell to {y[6]:.4g} g/kg at t = {(n + 1) * h:.4g} min")
        ys[n + 1] = y
    return MomentTrace(np.linspace(0.0, t_max, n_steps + 1), ys)


def moments_of_seed(spec: SeedSpec, material: MaterialProperties, c0: float = 0.0) -> MomentState:
    """Exact cross moments of the seed (independent marginals).

    Only first and second raw moments of each marginal enter, and both seed
    shapes are parameterised by their mean and standard deviation, so the
    formulas are shared.
    """
    m1, m2 = spec.mean_L1, spec.mean_L2
    e22 = m2**2 + spec.sigma_22**2
    mu00 = spec.m0 / (material.mass_factor * m1 * e22)
    return MomentState(
        mu00=mu00,
        mu10=mu00 * m1,
        mu01=mu00 * m2,
        mu11=mu00 * m1 * m2,
        mu02=mu00 * e22,
        mu12=mu00 * m1 * e22,
        c=c0,
    )


def moments_of_pssd(pssd, c0: float) -> MomentState:
    """Discrete moments of a PSSD (same quadrature as the FVM solver)."""
    from .fvm import cross_moment

    vals = [float(cross_moment(pssd, p, q)) for p, q in MOMENT_ORDERS]
    return MomentState(*vals, c=c0)
