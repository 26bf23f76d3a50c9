"""Run-configuration files.

INI syntax (``[section]`` / ``key = value``).  Units are fixed by the schema:
lengths in um, times in minutes (``t_max_hours`` is accepted and converted),
temperatures in degC, concentrations in g/kg.  Unknown sections or keys are
rejected.

Example::

    [grid]
    L1_max = 1200
    L2_max = 600
    dL1 = 5
    dL2 = 5

    [growth]
    law = polynomial
    coeffs = 0.5, 0.25
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConfigError, MaterialProperties, SeedSpec, SimulationConfig, build_grid
from .kinetics import ArrheniusGrowth, PolynomialGrowth


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _words(text: str) -> tuple:
    return tuple(x for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "grid": {"L1_max": float, "L2_max": float, "dL1": float, "dL2": float},
    "seed": {
        "shape": str,
        "mean_L1": float,
        "mean_L2": float,
        "sigma_11": float,
        "sigma_22": float,
        "m0": float,
    },
    "material": {"rho_c": float, "k_v": float, "solubility_a": float, "solubility_b": float},
    "growth": {
        "law": str,
        "kg11": float,
        "kg12": float,
        "kg13": float,
        "kg21": float,
        "kg22": float,
        "kg23": float,
        "coeffs": _floats,
        "coeffs_L2": _floats,
    },
    "simulation": {
        "t_max": float,
        "t_max_hours": float,
        "T": float,
        "c0": float,
        "courant_number": float,
        "output_sampling": int,
        "kernel": str,
    },
    "moments": {"n_steps": int},
    "verify": {"tol_rel": float},
    "benchmark": {
        "repeats": int,
        "bin_sizes": _floats,
        "growth_factors": _floats,
        "kernels": _words,
        "tol_rel": float,
    },
    "estimation": {
        "k_list": _ints,
        "backends": _words,
        "n_iter": int,
        "lr": float,
        "t_max": float,
        "n_samples": int,
        "data_law": str,
        "data_coeffs": _floats,
        "L1_max": float,
        "L2_max": float,
        "dL": float,
        "split_axes": _bool,
    },
}


@dataclass
class RunConfig:
    simulation: SimulationConfig
    kernel: str = "parallel"
    mom_steps: int = 10_000
    tol_rel: float = 0.01
    benchmark: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)


def _parse_sections(parser: configparser.ConfigParser) -> dict:
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        keys = SCHEMA[section]
        vals = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                vals[key] = keys[key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        out[section] = vals
    return out


def _growth(vals: dict):
    law = vals.get("law", "arrhenius")
    if law == "arrhenius":
        base = ArrheniusGrowth()
        allowed = {"law", "kg11", "kg12", "kg13", "kg21", "kg22", "kg23"}
        extra = set(vals) - allowed
        if extra:
            raise ConfigError(f"keys {sorted(extra)} do not apply to the Arrhenius law")
        return ArrheniusGrowth(
            k1=(vals.get("kg11", base.k1[0]), vals.get("kg21", base.k1[1])),
            k2=(vals.get("kg12", base.k2[0]), vals.get("kg22", base.k2[1])),
            k3=(vals.get("kg13", base.k3[0]), vals.get("kg23", base.k3[1])),
        )
    if law == "polynomial":
        if "coeffs" not in vals:
            raise ConfigError("polynomial growth needs coeffs")
        extra = set(vals) - {"law", "coeffs", "coeffs_L2"}
        if extra:
            raise ConfigError(f"keys {sorted(extra)} do not apply to the polynomial law")
        return PolynomialGrowth(vals["coeffs"], vals.get("coeffs_L2"))
    raise ConfigError(f"unknown growth law {law!r}")


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (L1_max, T)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    s = _parse_sections(parser)

    g = {"L1_max": 1200.0, "L2_max": 600.0, "dL1": 5.0, "dL2": 5.0, **s.get("grid", {})}
    sim = dict(s.get("simulation", {}))
    if "t_max" in sim and "t_max_hours" in sim:
        raise ConfigError("give t_max or t_max_hours, not both")
    if "t_max_hours" in sim:
        sim["t_max"] = SimulationConfig.hours(sim.pop("t_max_hours"))
    kernel = sim.pop("kernel", "parallel")
    if kernel not in ("serial", "parallel"):
        raise ConfigError(f"unknown kernel {kernel!r}")
    simulation = SimulationConfig(
        grid=build_grid(g["L1_max"], g["L2_max"], g["dL1"], g["dL2"]),
        seed=SeedSpec(**s.get("seed", {})),
        material=MaterialProperties(**s.get("material", {})),
        growth=_growth(s.get("growth", {})),
        **{"t_max": 30.0, **sim},
    )
    return RunConfig(
        simulation=simulation,
        kernel=kernel,
        mom_steps=s.get("moments", {}).get("n_steps", 10_000),
        tol_rel=s.get("verify", {}).get("tol_rel", 0.01),
        benchmark=s.get("benchmark", {}),
        estimation=s.get("estimation", {}),
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())
