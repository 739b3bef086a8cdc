"""Command-line front end: ``gcselect simulate|spectrum|sweep|validate``.

Configuration is a flat ``key = value`` file; any key may be overridden on
the command line as ``--key value`` (the flag wins).  Unknown keys are
errors.  All CSV output uses ``%.12e`` floats and LF line endings.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import asymptotics, fem, green, spectral, validation
from .core import Constant, Dirac, Grid, ModelParams, Random, realize_initial, weighted_mass

EXIT_OK, EXIT_CONFIG, EXIT_NO_CROSSING, EXIT_VALIDATION = 0, 1, 2, 3


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


# key -> (parser, default)
KEYS = {
    "Q0": (float, 2.0), "Q1": (float, 0.0), "d": (float, 0.0), "mu": (float, 1.0),
    "eps": (float, 0.1), "rho0": (float, 1.0), "s0": (float, 1.0),
    "n_cells": (int, 400), "dt": (float, 1e-3), "t_max": (float, 10.0), "mass": (str, "auto"),
    "stop_at_threshold": (_bool, False), "snapshot_times": (_float_list, []),
    "initial": (str, "constant"), "c": (float, 1.0), "seed": (int, 7),
    "lower": (float, 0.0), "upper": (float, 1.0), "z": (float, 0.5),
    "K": (int, 12), "K_modes": (int, 64),
    "axis": (str, "rho0"), "start": (float, 1.0), "stop": (float, 1e3), "count": (int, 8),
    "spacing": (str, "log"),
}


class ConfigError(ValueError):
    pass


class RunConfig(dict):
    """Parsed configuration; ``explicit`` holds the keys that were actually set."""

    def __init__(self, values: dict, explicit: set):
        super().__init__(values)
        self.explicit = explicit

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        raw = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected key = value")
                    key, value = (part.strip() for part in line.split("=", 1))
                    if key in raw:
                        raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                    raw[key] = value
        raw.update(overrides)
        values = {}
        for key, text in raw.items():
            if key not in KEYS:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                values[key] = KEYS[key][0](text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        full = {k: v[1] for k, v in KEYS.items()}
        full.update(values)
        return cls(full, set(values))

    def params(self) -> ModelParams:
        return ModelParams(Q0=self["Q0"], Q1=self["Q1"], d=self["d"], mu=self["mu"],
                           eps=self["eps"], rho0=self["rho0"], s0=self["s0"])

    def initial(self):
        kind = self["initial"]
        if kind == "constant":
            return Constant(self["c"])
        if kind == "random":
            return Random(self["seed"], self["lower"], self["upper"])
        if kind == "dirac":
            return Dirac(self["z"])
        raise ConfigError(f"unknown initial datum {kind!r} (constant, random or dirac)")

    def grid(self) -> Grid:
        return Grid(self["n_cells"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.12e" % float(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# --- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path, jobs: int) -> int:
    params = cfg.params()
    grid = cfg.grid()
    config = fem.FemConfig(grid, dt=cfg["dt"], t_max=cfg["t_max"],
                           snapshot_times=cfg["snapshot_times"],
                           stop_at_threshold=cfg["stop_at_threshold"], mass=cfg["mass"])
    rec = fem.run(cfg.initial(), params, config)
    write_csv(out / "timeseries.csv", ["t", "rho", "mass", "q_regime"],
              zip(rec.times, rec.rho_series, rec.mass_series, rec.q_regime))
    for t, f in rec.snapshots:
        write_csv(out / f"snapshot_{t:.6g}.csv", ["x", "n"], zip(grid.nodes, f.values))
    if rec.threshold_time is None:
        print(f"threshold not reached by t = {rec.times[-1]:.6g} (rho = {rec.rho_series[-1]:.6g})")
        return EXIT_NO_CROSSING if cfg["stop_at_threshold"] else EXIT_OK
    print(f"threshold_time = {rec.threshold_time:.12e}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path, jobs: int) -> int:
    params = cfg.params()
    grid = cfg.grid()
    K = cfg["K"]
    exact = spectral.eigs_exact(params, K, grid)
    asym = spectral.eigs_asymptotic(params, K, grid)
    write_csv(out / "spectrum.csv", ["k", "lambda_exact", "lambda_asym", "abs_gap"],
              ([p.k, p.lam, a.lam, abs(p.lam - a.lam)] for p, a in zip(exact, asym)))
    for p in exact:
        write_csv(out / f"eigvec_{p.k}.csv", ["x", "v"], zip(grid.nodes, p.vector.values))
    print(f"wrote {K} eigenpairs")
    return EXIT_OK


SWEEP_COLUMNS = ["axis_value", "t_fem", "t_spectral", "t_narrow_eps", "t_small_mu",
                 "t_large_mu", "t_l", "t_u", "errors"]


def sweep_values(cfg: RunConfig) -> np.ndarray:
    if cfg["count"] < 1:
        raise ConfigError("count must be >= 1")
    if cfg["spacing"] == "lin":
        return np.linspace(cfg["start"], cfg["stop"], cfg["count"])
    if cfg["spacing"] == "log":
        if cfg["start"] <= 0 or cfg["stop"] <= 0:
            raise ConfigError("log spacing needs positive start and stop")
        return np.geomspace(cfg["start"], cfg["stop"], cfg["count"])
    raise ConfigError(f"spacing must be lin or log, got {cfg['spacing']!r}")


def _clean(msg: str) -> str:
    return " ".join(str(msg).replace(",", ";").split())


def sweep_point(cfg: dict, axis: str, value: float) -> list:
    """Every available threshold-time estimate at one axis value."""
    cfg = RunConfig(dict(cfg), set())
    cfg[axis] = float(value)
    row = {c: None for c in SWEEP_COLUMNS}
    row["axis_value"] = float(value)
    errors = []

    def attempt(name, func):
        try:
            row[name] = func()
        except Exception as exc:  # recorded per point; the sweep carries on
            errors.append(f"{name}: {_clean(exc)}")

    try:
        params = cfg.params()
        grid = cfg.grid()
        grid.check_resolves(params.eps)
        initial = cfg.initial()
    except Exception as exc:
        row["errors"] = _clean(exc)
        return [row[c] for c in SWEEP_COLUMNS]

    attempt("t_fem", lambda: fem.time_to_threshold_numeric(initial, params, grid, cfg["dt"],
                                                           mass=cfg["mass"]))

    def t_spec():
        pairs = spectral.eigs_exact(params, cfg["K_modes"], grid)
        coeffs = spectral.modal_coefficients(initial, pairs, grid)
        return spectral.time_to_threshold_spectral(coeffs, pairs, params.b, params.rho0)

    attempt("t_spectral", t_spec)
    if not isinstance(initial, Dirac):
        f = realize_initial(initial, grid)
        mass, overlap = f.mass(), weighted_mass(params.selection(), f)

        def in_regime(est):
            return est.t_est if est.validity.ok else None

        attempt("t_narrow_eps", lambda: in_regime(asymptotics.t_threshold_narrow_eps(params, mass)))
        attempt("t_small_mu", lambda: in_regime(asymptotics.t_threshold_small_mu(params, overlap)))
        attempt("t_large_mu", lambda: in_regime(asymptotics.t_threshold_large_mu(params, mass)))
    else:
        def bounds():
            bp = green.bounds_bounded(green.DiracSetup(initial.z, params), params.rho0)
            row["t_l"] = bp.t_l
            return bp.t_u

        attempt("t_u", bounds)
    row["errors"] = "; ".join(errors) or None
    return [row[c] for c in SWEEP_COLUMNS]


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int) -> int:
    axis = cfg["axis"]
    if axis not in ("eps", "mu", "rho0"):
        raise ConfigError(f"axis must be eps, mu or rho0, got {axis!r}")
    values = sweep_values(cfg)
    base = dict(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(sweep_point, [base] * len(values), [axis] * len(values), values))
    else:
        rows = [sweep_point(base, axis, v) for v in values]
    write_csv(out / f"sweep_{axis}.csv", SWEEP_COLUMNS, rows)
    failed = sum(1 for r in rows if r[-1])
    print(f"{len(rows)} points, {failed} with errors")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path, jobs: int) -> int:
    settings = validation.Settings(
        dt=cfg["dt"] if "dt" in cfg.explicit else None,
        n_cells=cfg["n_cells"] if "n_cells" in cfg.explicit else None)
    results = validation.run_all(settings, echo=print)
    (out / "validation.csv").write_text(validation.report_csv(results), encoding="utf-8")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "spectrum": cmd_spectrum,
            "sweep": cmd_sweep, "validate": cmd_validate}


def parse_overrides(extra: list) -> dict:
    """Turn ``--key value`` / ``--key=value`` pairs into a dict."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"missing value for --{key}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcselect",
        description="Division-mutation-selection model: simulation, spectra, sweeps and validation.",
        epilog="Any configuration key can be overridden as --key value.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--out", default=".", help="output directory (default: current)")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel sweep workers (default: $GCSELECT_JOBS or 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        jobs = args.jobs if args.jobs is not None else int(os.environ.get("GCSELECT_JOBS", "1"))
        overrides = parse_overrides(extra)
        cfg = RunConfig.load(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, max(1, jobs))
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"gcselect: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
