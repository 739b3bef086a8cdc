"""P1 finite elements in trait, implicit Euler in time, with the nonlocal Q-switch."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .core import Field, Grid, ModelParams, SelectionProfile, realize_initial


@dataclass(frozen=True)
class FemConfig:
    """Discretization and run control.

    ``mass`` selects the mass matrix: ``"consistent"``, ``"lumped"`` or
    ``"auto"`` (consistent unless the implicit Euler matrix would lose its
    M-matrix sign pattern, in which case lumped mass and selection matrices
    keep the scheme positivity preserving).
    """

    grid: Grid
    dt: float = 1e-3
    t_max: float = 10.0
    snapshot_times: Sequence[float] = ()
    stop_at_threshold: bool = False
    mass: str = "auto"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.mass not in ("auto", "consistent", "lumped"):
            raise ValueError(f"unknown mass option {self.mass!r}")


@dataclass(frozen=True, eq=False)
class OperatorMatrices:
    M: sparse.csc_matrix
    K: sparse.csc_matrix
    S: sparse.csc_matrix
    # w @ n == int n_h dx and sw @ n == int s n_h dx for the P1 interpolant
    mass_weights: np.ndarray
    selection_weights: np.ndarray

    @property
    def M_lumped(self) -> sparse.csc_matrix:
        return sparse.diags(self.mass_weights, format="csc")

    @property
    def S_lumped(self) -> sparse.csc_matrix:
        return sparse.diags(self.selection_weights, format="csc")

    def pick(self, lumped: bool):
        """``(mass, selection)`` pair; lumping both keeps every off-diagonal non-positive."""
        return (self.M_lumped, self.S_lumped) if lumped else (self.M, self.S)


def _tridiag(diag, off):
    return sparse.diags([off, diag, off], [-1, 0, 1], format="csc")


def assemble(grid: Grid, params: ModelParams, s: SelectionProfile | None = None
             ) -> OperatorMatrices:
    """Assemble consistent mass, stiffness and selection matrices.

    The selection matrix integrates each cell piece by piece between profile
    breakpoints (Simpson's rule, exact for the quadratic integrand).
    """
    if s is None:
        s = params.selection()
    if any(v > 0 for v in s.values) and s.support_length() < 1:
        grid.check_resolves(s.support_length())
    n, h = grid.n_nodes, grid.h
    mdiag = np.full(n, 2 * h / 3)
    mdiag[[0, -1]] = h / 3
    M = _tridiag(mdiag, np.full(n - 1, h / 6))
    kdiag = np.full(n, 2 * params.mu / h)
    kdiag[[0, -1]] = params.mu / h
    K = _tridiag(kdiag, np.full(n - 1, -params.mu / h))

    sdiag = np.zeros(n)
    soff = np.zeros(n - 1)
    nodes = grid.nodes
    for i in range(grid.n_cells):
        x0, x1 = nodes[i], nodes[i + 1]
        for a, b, v in s.pieces_on(x0, x1):
            if v == 0.0:
                continue
            pts = np.array([a, 0.5 * (a + b), b])
            right = (pts - x0) / h
            left = 1.0 - right
            wts = np.array([1.0, 4.0, 1.0]) * (b - a) / 6 * v
            sdiag[i] += wts @ (left * left)
            sdiag[i + 1] += wts @ (right * right)
            soff[i] += wts @ (left * right)
    S = _tridiag(sdiag, soff)
    w = np.asarray(M.sum(axis=0)).ravel()
    sw = np.asarray(S.sum(axis=0)).ravel()
    return OperatorMatrices(M, K, S, w, sw)


def _system(mats: OperatorMatrices, Mm, Sm, Q: float, d: float, dt: float):
    return (Mm + dt * (mats.K + Sm + (d - Q) * Mm)).tocsc()


def _positivity_safe(mats: OperatorMatrices, Qs, d: float, dt: float) -> bool:
    # the implicit matrix must keep non-positive off-diagonals
    return all((_system(mats, mats.M, mats.S, Q, d, dt).diagonal(1) <= 0).all() for Q in Qs)


def step(state: Field, rho: float, params: ModelParams, matrices: OperatorMatrices,
         dt: float, lumped: bool = False):
    """Advance one implicit Euler step with ``Q(rho)`` frozen at the step start.

    Solves ``(M + dt (K + S + (d - Q) M)) n_new = M n_old`` and returns
    ``(n_new, rho + dt * int s n_new)``.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    Mm, Sm = matrices.pick(lumped)
    A = _system(matrices, Mm, Sm, params.Q(rho), params.d, dt)
    new = splu(A).solve(Mm @ state.values)
    return Field(state.grid, new), rho + dt * float(matrices.selection_weights @ new)


@dataclass(eq=False)
class SimulationRecord:
    """Time series of one run.

    ``q_regime[i]`` is 0 if row ``i`` was produced with ``Q0`` and 1 with
    ``Q1``; ``step_sizes[i]`` is the exact length of the step that produced
    it.  ``min_value`` is the smallest nodal value seen over the run.
    """

    times: np.ndarray
    rho_series: np.ndarray
    mass_series: np.ndarray
    q_regime: np.ndarray
    step_sizes: np.ndarray
    threshold_time: float | None = None
    snapshots: list = field(default_factory=list)
    min_value: float = math.inf
    mass_kind: str = "consistent"
    dt: float = math.nan
    final_state: Field | None = None

    def crossing_time(self, level: float) -> float | None:
        """First time the rho series reaches ``level``, by linear interpolation."""
        r = self.rho_series
        idx = int(np.searchsorted(r, level, side="left"))
        if idx >= len(r):
            return None
        if idx == 0:
            return float(self.times[0])
        r0, r1 = r[idx - 1], r[idx]
        t0, t1 = self.times[idx - 1], self.times[idx]
        return float(t0 + (level - r0) / (r1 - r0) * (t1 - t0))


def run(initial, params: ModelParams, config: FemConfig,
        selection: SelectionProfile | None = None,
        q_func: Callable[[float], float] | None = None) -> SimulationRecord:
    """Integrate from ``initial`` up to ``config.t_max``.

    While ``rho < rho0`` the division rate is ``Q0``; the step in which rho
    crosses ``rho0`` is split at the linearly interpolated crossing time, and
    the remainder of the step (and every later step) uses ``Q1``.  A custom
    ``q_func`` replaces the piecewise-constant rate and is evaluated at the
    start of every step.
    """
    grid = config.grid
    s = selection if selection is not None else params.selection()
    mats = assemble(grid, params, s)
    n = realize_initial(initial, grid).values.copy()
    d, rho0 = params.d, params.rho0
    Qs = (params.Q0, params.Q1)

    kind = config.mass
    if kind == "auto":
        kind = "consistent" if _positivity_safe(mats, Qs, d, config.dt) else "lumped"
    elif kind == "consistent" and not _positivity_safe(mats, Qs, d, config.dt):
        warnings.warn("consistent mass matrix is not an M-matrix at this dt; "
                      "nodal positivity is not guaranteed", RuntimeWarning)
    Mm, Sm = mats.pick(kind == "lumped")
    if 1 + config.dt * (d - max(Qs) + s.inf_on_unit) <= 0:
        warnings.warn("dt too large for a diagonally dominant implicit matrix",
                      RuntimeWarning)

    solvers: dict = {}

    def solve(rhs, Q, h):
        key = (Q, h)
        if key not in solvers:
            if len(solvers) > 8:
                solvers.clear()
            solvers[key] = splu(_system(mats, Mm, Sm, Q, d, h)).solve
        return solvers[key](rhs)

    w, sw = mats.mass_weights, mats.selection_weights
    t, rho = 0.0, 0.0
    crossed = False
    times, rhos, masses, regimes = [0.0], [0.0], [_sum(w, n)], [0]
    steps = [0.0]
    snaps_wanted = sorted(float(x) for x in config.snapshot_times)
    snapshots = []
    while snaps_wanted and snaps_wanted[0] <= 0.0:
        snapshots.append((snaps_wanted.pop(0), Field(grid, n)))
    min_value = float(n.min())
    threshold_time = None
    dt, t_max = config.dt, config.t_max
    i = 0

    def Q_at(r):
        if q_func is not None:
            return q_func(r)
        return Qs[1] if crossed else Qs[0]

    def advance(rhs, Q, h, prev_mass):
        # One implicit solve, then a rescaling by 1 + O(roundoff) so the
        # discrete balance 1^T A x = 1^T M n_old holds to the rounding of the
        # result instead of the LU backward error (positive factor: keeps signs).
        x = solve(rhs, Q, h)
        W, S = _sum(w, x), _sum(sw, x)
        if not (math.isfinite(W) and math.isfinite(S)):
            raise FloatingPointError(f"non-finite state at step {i} (t = {t:.6g})")
        denom = (1 + h * (d - Q)) * W + h * S
        if prev_mass > 0 and denom > 0:
            scale = prev_mass / denom
            x *= scale
            W *= scale
            S *= scale
        return x, W, S

    mass = masses[0]
    while t < t_max * (1 - 1e-12):
        h = min(dt, t_max - t)
        Q = Q_at(rho)
        rhs = Mm @ n
        new, mass_new, wm = advance(rhs, Q, h, mass)
        rho_new = rho + h * wm
        t_new = t + h
        regime = int(crossed)

        if not crossed and rho_new >= rho0:
            theta = (rho0 - rho) / (rho_new - rho)
            t_star = t + theta * h
            threshold_time = t_star
            # sub-step to the crossing so the balance holds exactly on both parts
            if theta < 1:
                n_star, mass_star, wm_star = advance(rhs, Q, theta * h, mass)
            else:
                n_star, mass_star, wm_star = new, mass_new, wm
            rho_star = rho + theta * h * wm_star
            _take_snapshots(snaps_wanted, snapshots, grid, t, t_star, n, n_star)
            times.append(t_star); rhos.append(rho_star)
            masses.append(mass_star); regimes.append(0); steps.append(theta * h)
            min_value = min(min_value, float(n_star.min()))
            crossed = True
            n, rho, t, mass = n_star, rho_star, t_star, mass_star
            if config.stop_at_threshold:
                break
            rest = t_new - t_star
            if rest <= 1e-14 * max(1.0, t_new):
                i += 1
                continue
            Q = Q_at(rho)
            new, mass_new, wm = advance(Mm @ n, Q, rest, mass)
            rho_new = rho + rest * wm
            regime = 1
            h = rest

        _take_snapshots(snaps_wanted, snapshots, grid, t, t_new, n, new)
        n, rho, t, mass = new, rho_new, t_new, mass_new
        times.append(t); rhos.append(rho); masses.append(mass); regimes.append(regime)
        steps.append(h)
        min_value = min(min_value, float(n.min()))
        i += 1

    return SimulationRecord(
        times=np.array(times), rho_series=np.array(rhos), mass_series=np.array(masses),
        q_regime=np.array(regimes, dtype=int), step_sizes=np.array(steps),
        threshold_time=threshold_time,
        snapshots=snapshots, min_value=min_value, mass_kind=kind, dt=dt,
        final_state=Field(grid, n))


def _sum(weights, values) -> float:
    # exactly rounded dot product keeps the discrete balance at roundoff of the result
    return math.fsum(weights * values)


def _take_snapshots(wanted, out, grid, t0, t1, n0, n1):
    while wanted and wanted[0] <= t1 + 1e-12:
        ts = wanted.pop(0)
        lam = 0.0 if t1 == t0 else min(1.0, max(0.0, (ts - t0) / (t1 - t0)))
        out.append((ts, Field(grid, (1 - lam) * n0 + lam * n1)))


def discrete_balance_residual(record: SimulationRecord, params: ModelParams,
                              per_unit_time: bool = False) -> float:
    """Largest per-step defect of ``[n_bar + rho] = int (Q - d) n_bar dt``.

    The time integral uses the right-endpoint rule, matching the implicit
    scheme.  With ``per_unit_time`` the defect is divided by the nominal time
    step (the shortened step at a crossing carries no more rounding than a
    full one, so dividing by its own length would only amplify roundoff).
    """
    if len(record.times) < 2:
        return 0.0
    dt = record.step_sizes[1:]
    total = record.mass_series + record.rho_series
    Q = np.where(record.q_regime[1:] == 1, params.Q1, params.Q0)
    res = np.abs(np.diff(total) - dt * (Q - params.d) * record.mass_series[1:])
    if per_unit_time:
        res = res / (record.dt if math.isfinite(record.dt) else dt.max())
    return float(res.max())


class ThresholdNotReached(RuntimeError):
    """No crossing before the time cap."""


def time_to_threshold_numeric(initial, params: ModelParams, grid: Grid, dt: float,
                              t_max: float = 8.0, t_cap: float = 4096.0,
                              mass: str = "auto", records: list | None = None) -> float:
    """Threshold time from direct simulation, doubling the horizon until a crossing.

    Every run's :class:`SimulationRecord` is appended to ``records`` if given.
    """
    horizon = t_max
    while True:
        rec = run(initial, params,
                  FemConfig(grid, dt=dt, t_max=horizon, stop_at_threshold=True, mass=mass))
        if records is not None:
            records.append(rec)
        if rec.threshold_time is not None:
            return rec.threshold_time
        if horizon >= t_cap:
            raise ThresholdNotReached(
                f"rho reached {rec.rho_series[-1]:.6g} < rho0 = {params.rho0:.6g} "
                f"by t = {horizon:.6g}")
        horizon = min(2 * horizon, t_cap)


def richardson_threshold_time(initial, params: ModelParams, grid: Grid, dt: float,
                              **kw) -> float:
    """First-order Richardson extrapolation ``2 t(dt/2) - t(dt)`` of the threshold time."""
    t1 = time_to_threshold_numeric(initial, params, grid, dt, **kw)
    t2 = time_to_threshold_numeric(initial, params, grid, dt / 2, **kw)
    return 2 * t2 - t1
