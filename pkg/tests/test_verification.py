import json

import numpy as np
import pytest

from popbal.core import PSSD, MaterialProperties, SeedSpec, build_grid
from popbal.fvm import TimeSeries, seed_pssd
from popbal.kinetics import ArrheniusGrowth
from popbal.moments import mom_solve, moments_of_seed
from popbal.verification import IncomparableError, compare_pssd, run_verified, verify_against_mom

MAT = MaterialProperties()


@pytest.fixture(scope="module")
def trace():
    return mom_solve(moments_of_seed(SeedSpec(), MAT, 8.0), 15.0, ArrheniusGrowth(), MAT, 30.0, 300)


def as_series(trace, stride=10, max_dt=1.0):
    idx = np.arange(0, len(trace.times), stride)
    s = trace.states[idx]
    channels = np.column_stack([s[:, 6], s[:, :6]])
    return TimeSeries(times=trace.times[idx], step_times=trace.times[idx], channels=channels, max_dt=max_dt)


def test_identical_traces_pass(trace):
    rep = verify_against_mom(as_series(trace), trace, 0.01)
    assert rep.passed
    assert all(c.max_rel_dev == 0.0 for c in rep.checks)
    assert {c.name for c in rep.checks} == {"concentration", "mu12"}


def test_injected_fault_reported(trace):
    ts = as_series(trace)
    ts.channels[7, 0] *= 1.05
    rep = verify_against_mom(ts, trace, 0.01)
    assert not rep.passed
    (bad,) = rep.failures()
    assert bad.name == "concentration"
    assert bad.offending_index == 7
    assert bad.offending_time == pytest.approx(ts.times[7])
    assert bad.max_rel_dev == pytest.approx(0.05, rel=1e-9)


def test_incomparable_sampling(trace):
    coarse = mom_solve(moments_of_seed(SeedSpec(), MAT, 8.0), 15.0, ArrheniusGrowth(), MAT, 30.0, 3)
    with pytest.raises(IncomparableError):
        verify_against_mom(as_series(trace, max_dt=0.5), coarse)


def test_jsonl(trace, tmp_path):
    ts = as_series(trace)
    ts.channels[3, 6] *= 0.9
    rep = verify_against_mom(ts, trace)
    rep.write(tmp_path / "v.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "v.jsonl").read_text().splitlines()]
    assert [r["name"] for r in rows] == ["concentration", "mu12"]
    assert rows[1]["passed"] is False and rows[1]["offending_index"] == 3


class TestComparePSSD:
    grid = build_grid(800, 450, 10, 10)

    def test_equal(self):
        s = seed_pssd(SeedSpec(), self.grid, MAT)
        assert compare_pssd(s, PSSD(self.grid, s.f.copy())).passed

    def test_shifted(self):
        s = seed_pssd(SeedSpec(), self.grid, MAT)
        rep = compare_pssd(s, PSSD(self.grid, np.roll(s.f, 1, axis=0)), 1e-6)
        assert not rep.passed and rep.checks[0].offending_index is not None

    def test_grid_mismatch(self):
        a = PSSD.zeros(self.grid)
        b = PSSD.zeros(build_grid(800, 450, 5, 5))
        with pytest.raises(IncomparableError):
            compare_pssd(a, b)


def test_base_case_passes(base_config):
    ts, tr, rep = run_verified(base_config, "parallel", 0.01)
    assert rep.passed, rep.to_jsonl()
    assert ts.n_steps > 0


def test_tight_tolerance_fails_on_coarse_grid(coarse_config):
    _, _, rep = run_verified(coarse_config, "parallel", 1e-9, 2000)
    assert not rep.passed
    assert all(c.offending_index is not None for c in rep.failures())
