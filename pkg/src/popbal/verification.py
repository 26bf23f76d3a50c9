"""Automated checks of FVM runs against the moment oracle and across kernels."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .core import PSSD
from .fvm import TimeSeries
from .moments import MomentTrace

REL_FLOOR = 1e-12


class IncomparableError(ValueError):
    """Traces cannot be paired (sampling too far apart, grids differ)."""


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_dev: float
    tol: float
    offending_index: int | None = None
    offending_time: float | None = None


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.checks.extend(other.checks)
        return self

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(c)) + "\n" for c in self.checks)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


def _check(name, got, ref, tol, times=None) -> CheckResult:
    dev = np.abs(got - ref) / np.maximum(np.abs(ref), REL_FLOOR)
    worst = int(np.argmax(dev))
    ok = bool(dev[worst] <= tol)
    return CheckResult(
        name=name,
        passed=ok,
        max_rel_dev=float(dev[worst]),
        tol=tol,
        offending_index=None if ok else worst,
        offending_time=None if ok or times is None else float(times[worst]),
    )


def verify_against_mom(fvm: TimeSeries, mom: MomentTrace, tol_rel: float = 0.01) -> VerificationReport:
    """Compare concentration and mu12 at each FVM sample with the nearest MOM node."""
    t_fvm = np.asarray(fvm.step_times, dtype=float)
    idx = np.clip(np.searchsorted(mom.times, t_fvm), 1, len(mom.times) - 1)
    left_closer = (t_fvm - mom.times[idx - 1]) <= (mom.times[idx] - t_fvm)
    idx = np.where(left_closer, idx - 1, idx)
    gap = np.abs(mom.times[idx] - t_fvm)
    # one FVM step is the coarsest resolution either trace can claim
    limit = fvm.max_dt if fvm.max_dt > 0 else np.inf
    if np.any(gap >= limit):
        raise IncomparableError(f"time pairing gap {gap.max():.3g} min exceeds one FVM step ({limit:.3g} min)")
    c = np.asarray(ad.primal(fvm.concentrations), dtype=float)
    v = np.asarray(ad.primal(fvm.crystal_volume), dtype=float)
    return VerificationReport(
        [
            _check("concentration", c, mom.concentrations[idx], tol_rel, t_fvm),
            _check("mu12", v, mom.crystal_volume[idx], tol_rel, t_fvm),
        ]
    )


def compare_pssd(a: PSSD, b: PSSD, tol_abs: float = 0.0, name: str = "final_pssd") -> VerificationReport:
    """Pass iff max |a - b| <= tol_abs * max(a)."""
    if a.grid != b.grid:
        raise IncomparableError("PSSDs live on different grids")
    fa = np.asarray(ad.primal(a.f))
    fb = np.asarray(ad.primal(b.f))
    diff = np.abs(fa - fb)
    worst = int(np.argmax(diff))
    scale = float(fa.max()) if fa.size else 0.0
    ok = bool(diff.flat[worst] <= tol_abs * scale)
    rel = float(diff.flat[worst] / scale) if scale > 0 else float(diff.flat[worst])
    return VerificationReport(
        [
            CheckResult(
                name=name,
                passed=ok,
                max_rel_dev=rel,
                tol=tol_abs,
                offending_index=None if ok else worst,
            )
        ]
    )


def run_verified(config, kernel: str = "parallel", tol_rel: float = 0.01, mom_steps: int = 10_000):
    """Simulate, solve the moment ODEs from the run's own discrete seed, compare.

    Returns ``(timeseries, mom_trace, report)``.
    """
    from .fvm import seed_pssd, simulate
    from .moments import mom_solve, moments_of_pssd

    seed = seed_pssd(config.seed, config.grid, config.material)
    ts = simulate(config, kernel=kernel, initial=seed)
    trace = mom_solve(moments_of_pssd(seed, config.c0), config.T, config.growth, config.material, config.t_max, mom_steps)
    return ts, trace, verify_against_mom(ts, trace, tol_rel)
