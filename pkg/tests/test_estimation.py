import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from popbal.core import MaterialProperties, SeedSpec, build_grid
from popbal.estimation import (
    BACKENDS,
    ExperimentSet,
    LossModel,
    ModelSetup,
    OptimizerState,
    adam_step,
    estimate,
    generate_experiments,
    grad_ad,
    loss,
    nd_steps,
    value_and_grad_nd,
    write_timing_csv,
)
from popbal.fvm import InfeasibleError, simulate
from popbal.kinetics import PolynomialGrowth, solubility

TRUTH = (0.5, 0.25)
SETUP = ModelSetup(grid=build_grid(800, 450, 10, 10))


@pytest.fixture(scope="module")
def data():
    return generate_experiments(PolynomialGrowth(TRUTH), t_max=60.0, n_samples=31, min_rk4_steps=600)


@pytest.fixture(scope="module")
def model(data):
    return LossModel(data, SETUP)


def central_fd(f, theta):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(len(theta)):
        h = np.cbrt(np.finfo(float).eps) * max(1.0, abs(theta[i]))
        xp, xm = theta.copy(), theta.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


class TestExperiments:
    def test_design(self, data):
        assert len(data) == 9
        assert sorted({e.T for e in data}) == [10.0, 15.0, 20.0]
        assert sorted({e.S0 for e in data}) == [1.15, 1.25, 1.5]

    def test_c0(self, data):
        (e,) = [e for e in data if (e.T, e.S0) == (15.0, 1.25)]
        assert e.c0 == pytest.approx(7.229, abs=1e-3)
        assert e.c0 == pytest.approx(1.25 * float(solubility(15.0, MaterialProperties())), rel=1e-15)

    def test_series(self, data):
        for e in data:
            assert e.times[0] == 0.0 and e.times[-1] == 60.0 and len(e.times) == 31
            assert np.all(np.diff(e.concentration) <= 0)
            assert np.all(np.diff(e.mean_L1) >= 0)
            assert e.mean_L1[0] == pytest.approx(400.0)

    def test_duplicates_rejected(self, data):
        e = data.experiments[0]
        with pytest.raises(ValueError):
            ExperimentSet((e, e), data.seed, data.material)


def _self_data(model, theta):
    """Experiments whose data are the model's own predictions at ``theta``."""
    exps = []
    for i, e in enumerate(model.experiments):
        ts = simulate(model.config(e), sampling="linear", growth=PolynomialGrowth(theta), initial=model.seed)
        exps.append(replace(e, concentration=ts.concentrations, mean_L1=ts.mean_L1, mean_L2=ts.mean_L2))
    return ExperimentSet(tuple(exps), model.experiments.seed, model.experiments.material)


class TestLoss:
    def test_perfect_prediction(self, model):
        theta = np.array([0.8, 0.1])
        assert loss(theta, _self_data(model, theta), SETUP) == 0.0

    def test_reordering(self, data, model):
        theta = np.array([0.3, 0.2])
        rev = ExperimentSet(tuple(reversed(data.experiments)), data.seed, data.material)
        assert loss(theta, rev, SETUP) == pytest.approx(model(theta), rel=1e-13)

    def test_truth_beats_start(self, model):
        floor = model(np.array(TRUTH))
        assert floor < 1e-2 * model(np.array([0.1, 0.1]))

    def test_value_and_grad_consistent(self, model):
        theta = np.array([0.7, 0.4])
        v, _ = model.value_and_grad(theta)
        assert v == model(theta)


class TestGradient:
    @pytest.mark.parametrize("k", [1, 2, 3, 3])
    def test_matches_central_fd(self, model, rng, k):
        # random, non-round points: round ones can put a step end exactly on a sample time (a kink)
        theta = rng.uniform(0.05, 0.8, k)
        g = grad_ad(theta, model)
        assert len(g) == len(theta)
        fd = central_fd(model, theta)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    def test_zero_seed_mass(self):
        ex = generate_experiments(
            PolynomialGrowth(TRUTH), seed=SeedSpec(m0=0.0), t_max=30.0, n_samples=11, min_rk4_steps=100
        )
        m = LossModel(ex, SETUP)
        v, g = m.value_and_grad(np.array([0.3, 0.2]))
        assert np.all(g == 0) and np.isfinite(v)

    def test_split_axes(self, data, rng):
        setup = replace(SETUP, split_axes=True)
        m = LossModel(data, setup)
        theta = rng.uniform(0.05, 0.5, 4)
        _, g = m.value_and_grad(theta)
        assert setup.n_params(2) == 4 and len(g) == 4
        fd = central_fd(m, theta)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


class TestND:
    def test_linear_exact(self):
        a = np.array([2.0, -3.0, 0.5])
        _, g = value_and_grad_nd(np.array([1.0, 2.0, 3.0]), lambda th: float(a @ th) + 1.0)
        np.testing.assert_allclose(g, a, rtol=1e-6)

    def test_step_size(self):
        np.testing.assert_array_equal(nd_steps(np.array([0.5, -4.0])), np.sqrt(np.finfo(float).eps) * np.array([1.0, 4.0]))

    def test_variants_identical(self, model):
        theta = np.array([0.4, 0.2])
        a = value_and_grad_nd(theta, model, "naive")
        b = value_and_grad_nd(theta, model, "batched", threads=4)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_agrees_with_ad(self, model):
        theta = np.array([0.4, 0.2])
        g_nd = value_and_grad_nd(theta, model)[1]
        g_ad = grad_ad(theta, model)
        assert np.linalg.norm(g_nd - g_ad) / np.linalg.norm(g_ad) < 1e-3

    def test_unknown_variant(self, model):
        with pytest.raises(ValueError):
            value_and_grad_nd(np.array([0.1]), model, "magic")


class TestAdam:
    def test_zero_gradient(self):
        s = OptimizerState.start([0.3, 0.7])
        s2 = adam_step(s, [0.0, 0.0])
        np.testing.assert_array_equal(s2.theta, s.theta)
        assert s2.iteration == 1

    def test_first_step_magnitude(self):
        s = adam_step(OptimizerState.start([1.0, 1.0, 1.0]), [3.0, -0.2, 1e-3])
        np.testing.assert_allclose(s.theta, [0.99, 1.01, 0.99], rtol=0, atol=1e-7)

    def test_projection_example(self):
        s = adam_step(OptimizerState.start([0.005]), [1.0])
        assert s.theta.tolist() == [0.0]

    def test_non_finite_gradient(self):
        with pytest.raises(FloatingPointError):
            adam_step(OptimizerState.start([0.1]), [np.nan])

    @given(
        arrays(float, 3, elements=st.floats(0, 1)),
        st.lists(arrays(float, 3, elements=st.floats(-1e3, 1e3)), min_size=1, max_size=20),
    )
    def test_projection_always_nonnegative(self, theta, grads):
        s = OptimizerState.start(theta)
        for g in grads:
            s = adam_step(s, g)
            assert np.all(s.theta >= 0)


class TestEstimate:
    def test_loss_decreases(self, data):
        r = estimate(data, 2, "ad", SETUP, n_iter=25, lr=0.05)
        assert r.losses[-1] < r.losses[0]
        assert r.thetas.shape == (25, 2)
        np.testing.assert_array_equal(r.thetas[0], [0.1, 0.1])

    def test_deterministic(self, data):
        a = estimate(data, 2, "ad", SETUP, n_iter=5)
        b = estimate(data, 2, "ad", SETUP, n_iter=5)
        np.testing.assert_array_equal(a.losses, b.losses)
        np.testing.assert_array_equal(a.final_theta, b.final_theta)

    def test_ad_vs_nd_trajectories(self, data):
        a = estimate(data, 2, "ad", SETUP, n_iter=20, lr=0.05)
        b = estimate(data, 2, "nd-batched", SETUP, n_iter=20, lr=0.05)
        np.testing.assert_allclose(b.losses, a.losses, rtol=0.05)

    def test_reports(self, data, tmp_path):
        reps = [estimate(data, k, b, SETUP, n_iter=2) for k in (1, 3) for b in BACKENDS]
        reps[-1].to_csv(tmp_path / "est.csv")
        rows = list(csv.reader(open(tmp_path / "est.csv")))
        assert rows[0] == ["iteration", "loss", "theta_1", "theta_2", "theta_3", "wall_ms"]
        assert len(rows) == 3
        write_timing_csv(reps, tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["k", "backend", "mean_iter_ms"] and len(rows) == 7
        assert all(np.isfinite(r.losses).all() for r in reps)

    def test_bad_arguments(self, data):
        with pytest.raises(ValueError):
            estimate(data, 0)
        with pytest.raises(ValueError):
            estimate(data, 1, "jax")

    def test_penalty_on_solver_failure(self, data, monkeypatch):
        import popbal.estimation as est

        def broken(*a, **kw):
            raise InfeasibleError("injected")

        monkeypatch.setattr(est, "simulate", broken)
        m = LossModel(data, SETUP)
        assert m.experiment_loss(np.array([0.3]), 0) == est.PENALTY
        assert m(np.array([0.3])) == 9 * est.PENALTY


def test_reverse_gradient_is_cheap(model):
    import time

    theta = np.array([0.37, 0.21])
    model(theta)

    def best(fn):
        out = []
        for _ in range(3):
            t0 = time.perf_counter()
            fn(theta)
            out.append(time.perf_counter() - t0)
        return min(out)

    assert best(model.value_and_grad) < 10 * best(model)
