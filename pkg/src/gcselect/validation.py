"""Cross-validation checks shared by ``gcselect validate`` and the acceptance tests.

Each check returns a :class:`CheckResult` holding the measured quantity, the
requirement it was compared against and the verdict.  FEM runs made by the
checks are collected in a :class:`Tracker` so positivity and monotonicity
can be audited across all of them at the end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import asymptotics, fem, green, spectral
from .core import Constant, Dirac, Grid, ModelParams, Random, loglog_slope, realize_initial, weighted_mass

RANDOM_SEED = 7


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    required: str
    passed: bool
    detail: str = ""

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        return f"[{self.status}] {self.name}: measured {self.measured:.6g} (required {self.required}) {self.detail}".rstrip()


@dataclass
class Settings:
    """Optional overrides applied to every FEM run of the suite (``None`` keeps each check's default)."""

    dt: float | None = None
    n_cells: int | None = None

    def pick_dt(self, default: float) -> float:
        return default if self.dt is None else self.dt

    def grid(self, default: int, eps: float | None = None) -> Grid:
        return Grid(default if self.n_cells is None else self.n_cells, eps)


@dataclass
class Tracker:
    records: list = field(default_factory=list)

    def min_value(self) -> float:
        return min((r.min_value for r in self.records), default=math.inf)

    def max_rho_decrease(self) -> float:
        return max((float(np.max(-np.diff(r.rho_series), initial=0.0)) for r in self.records),
                   default=0.0)


def _t_fem(initial, params, grid, dt, tracker, richardson=False, **kw):
    if richardson:
        t1 = fem.time_to_threshold_numeric(initial, params, grid, dt, records=tracker.records, **kw)
        t2 = fem.time_to_threshold_numeric(initial, params, grid, dt / 2, records=tracker.records, **kw)
        return 2 * t2 - t1
    return fem.time_to_threshold_numeric(initial, params, grid, dt, records=tracker.records, **kw)


def _nI_stats(initial, grid, params):
    f = realize_initial(initial, grid)
    return f.mass(), weighted_mass(params.selection(), f)


# --- oracle -----------------------------------------------------------------

def finite_volume_eigenvalues(mu: float, eps: float, s0: float, n_cells: int, K: int) -> np.ndarray:
    """Independent eigenvalue oracle: cell-centred finite volumes with Neumann ends.

    The tridiagonal eigenvectors are refined by their Rayleigh quotient in
    difference form, which avoids the cancellation of the raw small
    eigenvalues of a matrix with norm ``~ mu / h^2``.
    """
    h = 1.0 / n_cells
    xc = (np.arange(n_cells) + 0.5) * h
    s = np.where(xc < eps, s0, 0.0)
    diag = np.full(n_cells, 2 * mu / h ** 2)
    diag[0] = diag[-1] = mu / h ** 2
    diag = diag + s
    off = np.full(n_cells - 1, -mu / h ** 2)
    _, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, K - 1))
    num = mu / h ** 2 * np.sum(np.diff(v, axis=0) ** 2, axis=0) + np.sum(s[:, None] * v ** 2, axis=0)
    return num / np.sum(v ** 2, axis=0)


# --- checks -------------------------------------------------------------------

def check_eigen_oracle(settings: Settings, tracker: Tracker) -> CheckResult:
    start = time.perf_counter()
    worst = 0.0
    for mu, eps, s0 in [(1.0, 0.1, 1.0), (0.1, 0.2, 1.0), (5.0, 0.05, 1.0)]:
        p = ModelParams(Q0=1, Q1=1, d=0, mu=mu, eps=eps, rho0=1, s0=s0)
        exact = spectral.eigenvalues_exact(p, 8)
        oracle = finite_volume_eigenvalues(mu, eps, s0, 20000, 8)
        worst = max(worst, float(np.max(np.abs(exact - oracle) / np.abs(oracle))))
    elapsed = time.perf_counter() - start
    return CheckResult("AC1 eigenvalues vs 20000-cell oracle", worst, "<= 1e-06 and < 10 s",
                       worst <= 1e-6 and elapsed < 10, f"runtime {elapsed:.2f} s")


def check_eigen_order(settings: Settings, tracker: Tracker) -> CheckResult:
    ladder = [0.2, 0.1, 0.05, 0.025]
    errs = []
    for eps in ladder:
        p = ModelParams(Q0=1, Q1=1, d=0, mu=1.0, eps=eps, rho0=1)
        exact = spectral.eigenvalues_exact(p, 4)
        asym = spectral.eigs_asymptotic(p, 4, Grid(8))
        errs.append(max(abs(exact[k] - asym[k].lam) / ((k + 1) * math.pi) for k in range(4)))
    slope = loglog_slope(ladder, errs)
    return CheckResult("AC2 first-order eigenvalue expansion order in eps", slope, ">= 1.4",
                       slope >= 1.4)


def check_uniform_anchor(settings: Settings, tracker: Tracker) -> CheckResult:
    p = ModelParams(Q0=2, Q1=2, d=0, mu=1.0, eps=1.0, rho0=1.0)
    grid = settings.grid(400)
    t_fem = _t_fem(Constant(1.0), p, grid, settings.pick_dt(1e-4), tracker)
    pairs = spectral.eigs_exact(p, 8, grid)
    t_spec = spectral.time_to_threshold_spectral(
        spectral.modal_coefficients(Constant(1.0), pairs), pairs, p.b, p.rho0)
    vals = [t_fem, t_spec, math.log(2)]
    gap = max(abs(a - b) for a in vals for b in vals)
    return CheckResult("AC3 uniform selection anchor (ln 2)", gap, "<= 1e-3", gap <= 1e-3,
                       f"fem {t_fem:.6f}, spectral {t_spec:.6f}")


def log_slope_params(rho0: float = 1e3) -> ModelParams:
    return ModelParams(Q0=0.1, Q1=0.1, d=0.0, mu=1.0, eps=0.01, rho0=rho0)


def check_log_slope(settings: Settings, tracker: Tracker) -> list[CheckResult]:
    levels = np.logspace(0, 3, 8)
    # run past the top level so every level is crossed strictly inside the record
    p = log_slope_params(2 * levels[-1])
    grid = settings.grid(400)
    rec = fem.run(Constant(1.0), p, fem.FemConfig(grid, dt=settings.pick_dt(1e-3), t_max=400.0,
                                                  stop_at_threshold=True))
    tracker.records.append(rec)
    times = np.array([rec.crossing_time(r) for r in levels], dtype=float)
    slope = float(np.polyfit(np.log(levels), times, 1)[0])
    slope_dev = abs(slope - 1 / p.b) * p.b
    est = np.array([asymptotics.t_threshold_narrow_eps(p.replace(rho0=r), 1.0).t_est for r in levels])
    est_log = np.array([asymptotics.t_threshold_narrow_eps_log(p.replace(rho0=r), 1.0).t_est
                        for r in levels])
    dev = float(np.max(np.abs(times - est) / est))
    dev_log = float(np.max(np.abs(times - est_log) / est_log))
    # the lowest mode grows at b - Lambda_0, which sets the large-rho0 slope
    lam0 = float(spectral.eigenvalues_exact(p, 1)[0])
    return [
        CheckResult("AC4a threshold time vs ln(rho0): slope relative to 1/b", slope_dev, "<= 0.05",
                    slope_dev <= 0.05, f"slope {slope:.4f}, 1/b = {1 / p.b:.4f}, "
                    f"1/(b - Lambda_0) = {1 / (p.b - lam0):.4f}"),
        CheckResult("AC4b pointwise deviation from the narrow-window formula", dev, "<= 0.10",
                    dev <= 0.10, f"logarithmic variant {dev_log:.4f}"),
    ]


def _rho_at(initial, params, grid, dt, t, tracker):
    rec = fem.run(initial, params, fem.FemConfig(grid, dt=dt, t_max=t))
    tracker.records.append(rec)
    return float(rec.rho_series[-1])


def check_narrow_eps_order(settings: Settings, tracker: Tracker) -> CheckResult:
    ladder = [0.1, 0.05, 0.025, 0.0125]
    b, rho0 = 2.0, 100.0
    mu = b / (math.pi ** 2 / 4)
    grid = settings.grid(800)
    init = Random(RANDOM_SEED)
    dt = settings.pick_dt(1e-3)
    errs = []
    for eps in ladder:
        p = ModelParams(Q0=b, Q1=b, d=0.0, mu=mu, eps=eps, rho0=rho0)
        mass, _ = _nI_stats(init, grid, p)
        t_est = asymptotics.t_threshold_narrow_eps(p, mass).t_est
        r1 = _rho_at(init, p, grid, dt, t_est, tracker)
        r2 = _rho_at(init, p, grid, dt / 2, t_est, tracker)
        errs.append(abs(2 * r2 - r1 - rho0))
    order = loglog_slope(ladder, errs)
    return CheckResult("AC5 narrow-window estimate: order in eps", order, ">= 0.45", order >= 0.45,
                       "errors " + ", ".join(f"{e:.3g}" for e in errs))


def check_dirac_sandwich(settings: Settings, tracker: Tracker) -> list[CheckResult]:
    grid = settings.grid(400)
    worst = -math.inf
    violations = []
    improved = None
    for mu in np.logspace(-2, 2, 20):
        p = ModelParams(Q0=2.0, Q1=2.0, d=0.0, mu=float(mu), eps=0.1, rho0=1.0)
        setup = green.DiracSetup(0.5, p)
        bp = green.bounds_bounded(setup, p.rho0)
        t = _t_fem(Dirac(0.5), p, grid, settings.pick_dt(1e-3), tracker, t_max=2.0)
        margin = max(bp.t_l - t, t - bp.t_u)
        worst = max(worst, margin)
        if margin > 0:
            violations.append(f"mu={mu:.3g}")
        if improved is None:
            # the reported t_u is already the minimum; the branch says which bound won
            improved = (bp.t_u_inf, "whole-line" in bp.branch)
    return [
        CheckResult("AC6a fem threshold inside [t_l, t_u] for 20 mutation rates",
                    float(len(violations)), "0 violations", not violations,
                    f"largest signed excess {worst:.3g}" + (f"; at {violations}" if violations else "")),
        CheckResult("AC6b whole-line bound improves t_u at mu = 0.01", improved[0],
                    "t_u_inf < erfc t_u", improved[1]),
    ]


def check_large_mu(settings: Settings, tracker: Tracker) -> list[CheckResult]:
    b, eps, rho0 = 2.0, 0.1, 1.0
    grid = settings.grid(400)
    init = Random(RANDOM_SEED)
    errs = []
    for mu in (10.0, 20.0, 40.0):
        p = ModelParams(Q0=b, Q1=b, d=0.0, mu=mu, eps=eps, rho0=rho0)
        mass, _ = _nI_stats(init, grid, p)
        t_est = asymptotics.t_threshold_large_mu(p, mass).t_est
        t_fem = _t_fem(init, p, grid, settings.pick_dt(2e-4), tracker, richardson=True)
        errs.append(abs(t_fem - t_est))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok_ratio = all(1.5 <= r <= 2.5 for r in ratios)

    p = ModelParams(Q0=b, Q1=b, d=0.0, mu=1.0, eps=eps, rho0=rho0)
    K = 16
    f = realize_initial(init, Grid(2000))
    modes = [float(np.dot(f.grid.trapezoid_weights(), f.values * spectral.neumann_mode(k, f.grid.nodes)))
             for k in range(K)]
    M = spectral.overlap_matrix(p.selection(), K)
    t = 50.0
    gam = spectral.modal_cascade(modes, M, b, 3, t_grid=[t])[:, 0, 0]
    lead = np.array([modes[0] * (b - M[0, 0]) ** j * t ** j / math.factorial(j) for j in range(4)])
    cascade_ratio = gam / lead
    worst = float(np.max(np.abs(cascade_ratio - 1)))
    return [
        CheckResult("AC7a large-mu error ratios at mu = 10, 20, 40", min(ratios, key=lambda r: -abs(r - 2)),
                    "each in [1.5, 2.5]", ok_ratio,
                    "ratios " + ", ".join(f"{r:.4f}" for r in ratios)
                    + "; errors " + ", ".join(f"{e:.3g}" for e in errs)),
        CheckResult("AC7b cascade leading-term ratio at t = 50, j <= 3", worst,
                    "|ratio - 1| <= 0.1", worst <= 0.1,
                    "ratios " + ", ".join(f"{r:.4f}" for r in cascade_ratio)),
    ]


def check_small_mu(settings: Settings, tracker: Tracker) -> CheckResult:
    b, eps, rho0 = 2.0, 0.1, 1.0
    grid = settings.grid(400)
    init = Random(RANDOM_SEED)
    errs = []
    for mu in (1e-2, 1e-4):
        p = ModelParams(Q0=b, Q1=b, d=0.0, mu=mu, eps=eps, rho0=rho0)
        _, overlap = _nI_stats(init, grid, p)
        t_est = asymptotics.t_threshold_small_mu(p, overlap).t_est
        t_fem = _t_fem(init, p, grid, settings.pick_dt(1e-3), tracker, richardson=True)
        errs.append(abs(t_fem - t_est))
    return CheckResult("AC8 small-mu error shrinks from mu = 1e-2 to 1e-4", errs[1] / errs[0],
                       "< 1 (error ratio)", errs[1] < errs[0],
                       f"errors {errs[0]:.3g} -> {errs[1]:.3g}")


def check_balance(settings: Settings, tracker: Tracker) -> list[CheckResult]:
    p = log_slope_params()
    rec = fem.run(Constant(1.0), p, fem.FemConfig(settings.grid(400), dt=settings.pick_dt(1e-3),
                                                  t_max=400.0, stop_at_threshold=True))
    tracker.records.append(rec)
    res = fem.discrete_balance_residual(rec, p, per_unit_time=True)
    low = tracker.min_value()
    drop = tracker.max_rho_decrease()
    return [
        CheckResult("AC9a discrete balance residual per unit time", res, "<= 1e-8", res <= 1e-8),
        CheckResult("AC9b smallest nodal value over all acceptance runs", low, ">= 0", low >= 0,
                    f"{len(tracker.records)} runs"),
        CheckResult("AC9c largest decrease of the rho series", drop, "<= 0", drop <= 0),
    ]


def check_saturation(settings: Settings, tracker: Tracker) -> CheckResult:
    p = ModelParams(Q0=3.0, Q1=0.0, d=1.0, mu=1.0, eps=0.1, rho0=1.0)
    t_max = 200.0
    rec = fem.run(Constant(1.0), p, fem.FemConfig(settings.grid(400), dt=settings.pick_dt(1e-2),
                                                  t_max=t_max))
    tracker.records.append(rec)
    half = float(np.interp(t_max / 2, rec.times, rec.rho_series))
    gain = float(rec.rho_series[-1] - half)
    return CheckResult("AC10 rho saturates after the switch", gain, "<= 1e-6", gain <= 1e-6,
                       f"rho(t_max) = {rec.rho_series[-1]:.6g}")


def check_j_bound(settings: Settings, tracker: Tracker) -> CheckResult:
    worst = math.inf
    bad = 0
    for a in (0.0, 0.5, 1.0, 2.0, 5.0):
        for t in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
            J = green.j_integral(a, t)
            lb = green.j_lower_bound(a, t)
            worst = min(worst, J - lb)
            bad += J < lb
    return CheckResult("AC11 J_a(t) above its lower bound at 30 points", float(bad),
                       "0 violations", bad == 0, f"smallest gap {worst:.3g}")


CHECKS = [check_eigen_oracle, check_eigen_order, check_uniform_anchor, check_log_slope,
          check_narrow_eps_order, check_dirac_sandwich, check_large_mu, check_small_mu,
          check_saturation, check_j_bound, check_balance]


def run_all(settings: Settings | None = None, echo=None) -> list[CheckResult]:
    """Run every check in order; the balance and positivity audit comes last."""
    settings = settings or Settings()
    tracker = Tracker()
    out = []
    for check in CHECKS:
        res = check(settings, tracker)
        for r in (res if isinstance(res, list) else [res]):
            out.append(r)
            if echo is not None:
                echo(r.line())
    return out


def report_csv(results: list[CheckResult]) -> str:
    lines = ["check,measured,required,status"]
    for r in results:
        lines.append(f"\"{r.name}\",{r.measured:.12e},\"{r.required}\",{r.status}")
    return "\n".join(lines) + "\n"
