import csv

import pytest

from popbal.benchmark import HEADER, VerificationFailed, run_benchmark, scale_L1_growth, write_benchmark_csv
from popbal.core import SimulationConfig, build_grid
from popbal.kinetics import ArrheniusGrowth, PolynomialGrowth


def test_scale_arrhenius():
    law = scale_L1_growth(ArrheniusGrowth(), 3.0)
    base = ArrheniusGrowth()
    assert law.rate(1, 1.3, 15.0) == pytest.approx(3 * base.rate(1, 1.3, 15.0))
    assert law.rate(2, 1.3, 15.0) == base.rate(2, 1.3, 15.0)


def test_scale_polynomial():
    law = scale_L1_growth(PolynomialGrowth((1.0, 2.0)), 0.5)
    assert law.rate(1, 1.5) == pytest.approx(0.5 * PolynomialGrowth((1.0, 2.0)).rate(1, 1.5))
    assert law.rate(2, 1.5) == PolynomialGrowth((1.0, 2.0)).rate(2, 1.5)


@pytest.fixture
def base():
    return SimulationConfig(grid=build_grid(1200, 600, 6, 6), t_max=5.0)


def test_rows_and_csv(base, tmp_path):
    seen = []
    rows = run_benchmark(base, bin_sizes=(8, 6), growth_factors=(1.0,), repeats=2, mom_steps=500, on_row=seen.append)
    assert len(rows) == 6 and seen == rows
    assert all(r.mean_ms > 0 and r.n_steps > 0 for r in rows)
    assert [r.value for r in rows[:4:2]] == [150 * 75, 200 * 100]
    write_benchmark_csv(rows, tmp_path / "b.csv")
    lines = list(csv.reader(open(tmp_path / "b.csv")))
    assert lines[0] == HEADER and len(lines) == 7


def test_failure_aborts(base):
    with pytest.raises(VerificationFailed) as info:
        run_benchmark(base, bin_sizes=(8,), kernels=("parallel",), repeats=1, tol_rel=1e-12, mom_steps=500)
    assert info.value.report.failures()
