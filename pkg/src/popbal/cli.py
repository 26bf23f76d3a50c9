"""``popbal`` command-line tool.

Exit codes: 0 success, 1 usage/config/solver error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmark import VerificationFailed, run_benchmark, write_benchmark_csv
from .config import RunConfig, load_config
from .core import ConfigError, build_grid
from .fvm import SolverError, simulate, write_pssd_csv
from .moments import mom_solve, moments_of_seed
from .verification import compare_pssd, run_verified

log = logging.getLogger("popbal")

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig, args) -> int:
    ts = simulate(cfg.simulation, kernel=cfg.kernel)
    out = _out_dir(args)
    ts.to_csv(out / "timeseries.csv")
    write_pssd_csv(ts.final_pssd, out / "final_pssd.csv")
    log.info("%d steps, final c = %.6g g/kg", ts.n_steps, ts.concentrations[-1])
    return EXIT_OK


def cmd_moments(cfg: RunConfig, args) -> int:
    sim = cfg.simulation
    trace = mom_solve(moments_of_seed(sim.seed, sim.material, sim.c0), sim.T, sim.growth, sim.material, sim.t_max, cfg.mom_steps)
    trace.sample(sim.sample_times()).to_csv(_out_dir(args) / "moments.csv")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    ts, _, report = run_verified(cfg.simulation, cfg.kernel, cfg.tol_rel, cfg.mom_steps)
    if args.compare_kernels:
        other = "serial" if cfg.kernel == "parallel" else "parallel"
        ts2 = simulate(cfg.simulation, kernel=other)
        report.extend(compare_pssd(ts.final_pssd, ts2.final_pssd, 0.0, name=f"{cfg.kernel}_vs_{other}"))
    report.write(_out_dir(args) / "verification.jsonl")
    for c in report.checks:
        log.info("%-24s %s  max rel dev %.3e (tol %g)", c.name, "PASS" if c.passed else "FAIL", c.max_rel_dev, c.tol)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_benchmark(cfg: RunConfig, args) -> int:
    b = cfg.benchmark
    kernels = (args.kernel,) if args.kernel else b.get("kernels", ("serial", "parallel"))
    rows = run_benchmark(
        cfg.simulation,
        bin_sizes=b.get("bin_sizes", (10.0, 7.5, 5.0)),
        growth_factors=b.get("growth_factors", (0.5, 1.0, 2.0)),
        kernels=kernels,
        repeats=args.repeats or b.get("repeats", 10),
        tol_rel=b.get("tol_rel", cfg.tol_rel),
        mom_steps=cfg.mom_steps,
        on_row=lambda r: log.info("%s=%g %s: %.2f ms (%d steps)", r.sweep_param, r.value, r.kernel, r.mean_ms, r.n_steps),
    )
    write_benchmark_csv(rows, _out_dir(args) / "benchmark.csv")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, args) -> int:
    from .estimation import ModelSetup, estimate, generate_experiments, write_timing_csv
    from .kinetics import ArrheniusGrowth, PolynomialGrowth

    e = cfg.estimation
    sim = cfg.simulation
    data_law = e.get("data_law", "arrhenius")
    if data_law == "arrhenius":
        law = sim.growth if isinstance(sim.growth, ArrheniusGrowth) else ArrheniusGrowth()
    elif data_law == "polynomial":
        law = PolynomialGrowth(e.get("data_coeffs", (0.5, 0.25)))
    else:
        raise ConfigError(f"unknown data_law {data_law!r}")
    experiments = generate_experiments(
        law, sim.material, sim.seed, t_max=e.get("t_max", 30.0), n_samples=e.get("n_samples", 600), min_rk4_steps=cfg.mom_steps
    )
    dL = e.get("dL", 5.0)
    setup = ModelSetup(
        grid=build_grid(e.get("L1_max", 1000.0), e.get("L2_max", 500.0), dL, dL),
        courant_number=sim.courant_number,
        split_axes=e.get("split_axes", False),
    )
    out = _out_dir(args)
    reports = []
    for k in e.get("k_list", (1, 4, 16)):
        for backend in e.get("backends", ("ad", "nd-batched", "nd-naive")):
            r = estimate(experiments, k, backend, setup, n_iter=e.get("n_iter", 100), lr=e.get("lr", 0.01))
            r.to_csv(out / f"estimation_k{k}_{backend}.csv")
            reports.append(r)
            log.info("k=%d %-10s loss %.4g -> %.4g, %.1f ms/iter", k, backend, r.losses[0], r.losses[-1], r.mean_iter_ms)
    _write_combined(reports, out / "estimation.csv")
    write_timing_csv(reports, out / "iteration_timing.csv")
    return EXIT_OK


def _write_combined(reports, path) -> None:
    import csv

    width = max(r.thetas.shape[1] for r in reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "backend", "iteration", "loss"] + [f"theta_{i + 1}" for i in range(width)] + ["wall_ms"])
        for r in reports:
            for it in range(len(r.losses)):
                th = [repr(float(x)) for x in r.thetas[it]] + [""] * (width - r.thetas.shape[1])
                w.writerow([r.k, r.backend, it, repr(float(r.losses[it]))] + th + [repr(float(r.wall_ms[it]))])


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "verify": cmd_verify,
    "benchmark": cmd_benchmark,
    "estimate": cmd_estimate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popbal", description="2D batch crystallization PBE toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--repeats", type=int, default=None, help="benchmark repeats per point")
    p.add_argument("--kernel", choices=("serial", "parallel"), default=None)
    p.add_argument("--compare-kernels", action="store_true", help="verify: also check serial vs parallel PSSD")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.kernel:
            cfg = replace(cfg, kernel=args.kernel)
        np.seterr(over="ignore", under="ignore")
        return COMMANDS[args.command](cfg, args)
    except VerificationFailed as exc:
        log.error("verification failed: %s", exc)
        return EXIT_VERIFY
    except (ConfigError, SolverError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
