"""Wall-clock benchmark of the FVM kernels over grid and time-step sweeps."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from .core import SimulationConfig, build_grid
from .fvm import simulate
from .kinetics import ArrheniusGrowth, PolynomialGrowth
from .verification import run_verified

HEADER = ["sweep_param", "value", "kernel", "mean_ms", "stddev_ms", "n_steps"]


class VerificationFailed(RuntimeError):
    def __init__(self, label, report):
        super().__init__(f"{label}: " + ", ".join(f"{c.name} dev {c.max_rel_dev:.3g} > {c.tol}" for c in report.failures()))
        self.report = report


@dataclass
class BenchmarkRow:
    sweep_param: str
    value: float
    kernel: str
    mean_ms: float
    stddev_ms: float
    n_steps: int

    def as_list(self):
        return [self.sweep_param, repr(float(self.value)), self.kernel, repr(self.mean_ms), repr(self.stddev_ms), self.n_steps]


def scale_L1_growth(law, factor: float):
    """Multiply the L1 growth rate by ``factor``, leaving L2 untouched."""
    if isinstance(law, ArrheniusGrowth):
        return replace(law, k1=(law.k1[0] * factor, law.k1[1]))
    if isinstance(law, PolynomialGrowth):
        base = np.atleast_1d(np.asarray(law.coeffs, dtype=float))
        l2 = base if law.coeffs_L2 is None else law.coeffs_L2
        return PolynomialGrowth(tuple(base * factor), tuple(np.atleast_1d(l2)))
    raise TypeError(f"cannot rescale {type(law).__name__}")


def time_run(config: SimulationConfig, kernel: str, repeats: int):
    times = []
    n_steps = 0
    for _ in range(repeats):
        t0 = time.perf_counter()
        ts = simulate(config, kernel=kernel, keep_final=False)
        times.append(1e3 * (time.perf_counter() - t0))
        n_steps = ts.n_steps
    sd = float(np.std(times, ddof=1)) if repeats > 1 else 0.0
    return float(np.mean(times)), sd, n_steps


def run_benchmark(
    base: SimulationConfig,
    bin_sizes=(),
    growth_factors=(),
    kernels=("serial", "parallel"),
    repeats: int = 10,
    tol_rel: float = 0.01,
    mom_steps: int = 10_000,
    on_row=None,
) -> list:
    """Every sweep point is verified against the moment oracle before timing."""
    points = []
    for d in bin_sizes:
        cfg = replace(base, grid=build_grid(base.grid.L1_max, base.grid.L2_max, d, d))
        points.append(("n_bins", cfg.grid.n1 * cfg.grid.n2, cfg))
    for fac in growth_factors:
        points.append(("growth_ratio_factor", fac, replace(base, growth=scale_L1_growth(base.growth, fac))))
    rows = []
    for param, value, cfg in points:
        for kernel in kernels:
            # the verified run doubles as warm-up (kernel compilation)
            _, _, report = run_verified(cfg, kernel, tol_rel, mom_steps)
            if not report.passed:
                raise VerificationFailed(f"{param}={value} kernel={kernel}", report)
            row = BenchmarkRow(param, value, kernel, *time_run(cfg, kernel, repeats))
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def write_benchmark_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in rows:
            w.writerow(r.as_list())
