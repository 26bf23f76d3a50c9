"""Growth-parameter estimation from in-silico batch experiments.

Data come from the moment solver; the model is the FVM solver with a
polynomial growth law.  Gradients of the residual-sum-of-squares loss can be
taken by reverse-mode AD through the whole simulation or by forward
differences (serial or concurrent).
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .core import Grid2D, MaterialProperties, PSSD, SeedSpec, SimulationConfig, build_grid
from .fvm import SolverError, seed_pssd, simulate
from .kinetics import ArrheniusGrowth, PolynomialGrowth, solubility
from .moments import mom_solve, moments_of_seed

log = logging.getLogger(__name__)

TEMPERATURES = (10.0, 15.0, 20.0)
SUPERSATURATIONS = (1.15, 1.25, 1.5)
BACKENDS = ("ad", "nd-batched", "nd-naive")
PENALTY = 1e6


@dataclass(frozen=True)
class Experiment:
    T: float
    S0: float
    c0: float
    t_max: float
    times: np.ndarray
    concentration: np.ndarray
    mean_L1: np.ndarray
    mean_L2: np.ndarray

    def channels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.concentration, self.mean_L1, self.mean_L2


@dataclass(frozen=True)
class ExperimentSet:
    experiments: tuple
    seed: SeedSpec
    material: MaterialProperties

    def __post_init__(self):
        combos = {(e.T, e.S0) for e in self.experiments}
        if len(combos) != len(self.experiments):
            raise ValueError("duplicate (T, S0) combination in experiment set")

    def __iter__(self):
        return iter(self.experiments)

    def __len__(self):
        return len(self.experiments)


def generate_experiments(
    law=None,
    material: MaterialProperties | None = None,
    seed: SeedSpec | None = None,
    t_max: float = 30.0,
    n_samples: int = 600,
    temperatures=TEMPERATURES,
    supersaturations=SUPERSATURATIONS,
    min_rk4_steps: int = 10_000,
) -> ExperimentSet:
    """Moment-solver experiments on the full (T, S0) grid.

    Every concentration and mean-length series is sampled at ``n_samples``
    equally spaced times including both ends.  The RK4 step count is rounded
    up to a multiple of ``n_samples - 1`` so samples fall on RK4 nodes.
    """
    law = ArrheniusGrowth() if law is None else law
    material = MaterialProperties() if material is None else material
    seed = SeedSpec() if seed is None else seed
    intervals = n_samples - 1
    n_steps = intervals * -(-min_rk4_steps // intervals)
    stride = n_steps // intervals
    exps = []
    for T, S0 in itertools.product(temperatures, supersaturations):
        c0 = S0 * float(solubility(T, material))
        trace = mom_solve(moments_of_seed(seed, material, c0), T, law, material, t_max, n_steps)
        s = trace.states[::stride]
        mu00 = np.where(s[:, 0] > 0, s[:, 0], 1.0)
        exps.append(
            Experiment(
                T=float(T),
                S0=float(S0),
                c0=c0,
                t_max=float(t_max),
                times=np.linspace(0.0, t_max, n_samples),
                concentration=s[:, 6].copy(),
                mean_L1=np.where(s[:, 0] > 0, s[:, 1] / mu00, 0.0),
                mean_L2=np.where(s[:, 0] > 0, s[:, 2] / mu00, 0.0),
            )
        )
    return ExperimentSet(tuple(exps), seed, material)


@dataclass(frozen=True)
class ModelSetup:
    """FVM settings for the forward model inside the loss."""

    grid: Grid2D = field(default_factory=lambda: build_grid(1000, 500, 5, 5))
    courant_number: float = 0.9
    split_axes: bool = False  # separate coefficient vectors for L1 and L2

    def n_params(self, k: int) -> int:
        return 2 * k if self.split_axes else k

    def growth(self, theta) -> PolynomialGrowth:
        if not self.split_axes:
            return PolynomialGrowth(theta, _check=False)
        k = len(theta) // 2
        return PolynomialGrowth(theta[:k], theta[k:], _check=False)


class LossModel:
    """Callable loss over one experiment set; caches the seed distribution."""

    def __init__(self, experiments: ExperimentSet, setup: ModelSetup | None = None):
        self.experiments = experiments
        self.setup = ModelSetup() if setup is None else setup

    @cached_property
    def seed(self) -> PSSD:
        return seed_pssd(self.experiments.seed, self.setup.grid, self.experiments.material)

    @cached_property
    def scales(self) -> list:
        # RMS of each data channel; an all-zero channel keeps unit weight
        return [tuple(float(np.sqrt(np.mean(ch**2))) or 1.0 for ch in e.channels()) for e in self.experiments]

    def config(self, e: Experiment) -> SimulationConfig:
        return SimulationConfig(
            grid=self.setup.grid,
            seed=self.experiments.seed,
            material=self.experiments.material,
            growth=PolynomialGrowth((0.0,)),
            t_max=e.t_max,
            T=e.T,
            c0=e.c0,
            courant_number=self.setup.courant_number,
            output_sampling=len(e.times),
        )

    def experiment_loss(self, theta, i: int):
        """Scaled residual sum of squares for experiment ``i``."""
        e = self.experiments.experiments[i]
        try:
            ts = simulate(
                self.config(e),
                sampling="linear",
                growth=self.setup.growth(theta),
                initial=self.seed,
                keep_final=False,
            )
        except SolverError as exc:
            log.debug("experiment %d infeasible at theta=%s: %s", i, ad.primal(theta), exc)
            return PENALTY
        total = 0.0
        for pred, data, scale in zip((ts.concentrations, ts.mean_L1, ts.mean_L2), e.channels(), self.scales[i]):
            r = (pred - data) / scale
            total = total + ad.sum(r * r)
        return total

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(sum(float(self.experiment_loss(theta, i)) for i in range(len(self.experiments))))

    def value_and_grad(self, theta):
        """Loss and its exact gradient by reverse-mode AD.

        Each experiment is recorded on its own tape, so only one trajectory
        is held in memory at a time.
        """
        theta = np.asarray(theta, dtype=float)
        value = 0.0
        grad = np.zeros_like(theta)
        for i in range(len(self.experiments)):
            tape = ad.Tape()
            th = tape.variable(theta)
            out = self.experiment_loss(th, i)
            if isinstance(out, ad.Var):
                value += float(out.value)
                grad += tape.gradient(out, [th])[0]
            else:
                value += float(out)
        return value, grad


def loss(theta, experiments: ExperimentSet, setup: ModelSetup | None = None):
    return LossModel(experiments, setup)(theta)


def grad_ad(theta, model: LossModel) -> np.ndarray:
    return model.value_and_grad(theta)[1]


def nd_steps(theta) -> np.ndarray:
    return np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(theta))


def value_and_grad_nd(theta, model, variant: str = "naive", threads: int | None = None):
    """Forward-difference gradient: k + 1 loss evaluations.

    ``batched`` evaluates the perturbed losses concurrently, ``naive`` one
    after another; both perform identical arithmetic.
    """
    theta = np.asarray(theta, dtype=float)
    h = nd_steps(theta)
    points = []
    for i in range(len(theta)):
        x = theta.copy()
        x[i] += h[i]
        points.append(x)
    if variant == "naive":
        f0 = model(theta)
        fs = [model(x) for x in points]
    elif variant == "batched":
        with ThreadPoolExecutor(max_workers=threads) as pool:
            f0, *fs = pool.map(model, [theta] + points)
    else:
        raise ValueError(f"unknown ND variant {variant!r}")
    # divide by the step actually taken after rounding
    steps = np.array([points[i][i] - theta[i] for i in range(len(theta))])
    return f0, (np.array(fs) - f0) / steps


def grad_nd(theta, model, variant: str = "naive") -> np.ndarray:
    return value_and_grad_nd(theta, model, variant)[1]


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    iteration: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def start(cls, theta, **kw) -> "OptimizerState":
        theta = np.asarray(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), **kw)


def adam_step(state: OptimizerState, g) -> OptimizerState:
    """Bias-corrected Adam update followed by projection onto theta >= 0."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    t = state.iteration + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = state.theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, theta=np.maximum(theta, 0.0), m=m, v=v, iteration=t)


@dataclass
class EstimationReport:
    backend: str
    k: int
    losses: np.ndarray  # loss at the iterate the gradient was taken
    thetas: np.ndarray  # (n_iter, n_params)
    wall_ms: np.ndarray
    final_theta: np.ndarray

    @property
    def mean_iter_ms(self) -> float:
        return float(np.mean(self.wall_ms))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"] + [f"theta_{i + 1}" for i in range(self.thetas.shape[1])] + ["wall_ms"])
            for it in range(len(self.losses)):
                w.writerow(
                    [it, repr(float(self.losses[it]))]
                    + [repr(float(x)) for x in self.thetas[it]]
                    + [repr(float(self.wall_ms[it]))]
                )


def write_timing_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "backend", "mean_iter_ms"])
        for r in reports:
            w.writerow([r.k, r.backend, repr(r.mean_iter_ms)])


def estimate(
    experiments: ExperimentSet,
    k: int,
    backend: str = "ad",
    setup: ModelSetup | None = None,
    n_iter: int = 100,
    lr: float = 0.01,
    theta0=None,
) -> EstimationReport:
    """Run ``n_iter`` projected Adam iterations from theta = 0.1 (default)."""
    if k < 1:
        raise ValueError("need at least one parameter")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    model = LossModel(experiments, setup)
    n = model.setup.n_params(k)
    theta = np.full(n, 0.1) if theta0 is None else np.asarray(theta0, dtype=float)
    state = OptimizerState.start(theta, lr=lr)
    losses, thetas, wall = [], [], []
    for _ in range(n_iter):
        t0 = time.perf_counter()
        if backend == "ad":
            val, g = model.value_and_grad(state.theta)
        else:
            val, g = value_and_grad_nd(state.theta, model, backend.split("-")[1])
        thetas.append(state.theta)
        state = adam_step(state, g)
        wall.append(1e3 * (time.perf_counter() - t0))
        losses.append(val)
    return EstimationReport(backend, k, np.array(losses), np.array(thetas), np.array(wall), state.theta)
