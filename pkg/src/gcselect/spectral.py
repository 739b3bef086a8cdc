"""Spectral calculus for ``A = -mu d^2/dx^2 + s(x)`` on [0, 1] with Neumann ends.

The selection profile is the canonical two-piece indicator ``s0`` on
``[0, eps]``.  Eigenpairs are built from the transfer solution started at
``V(0) = 1, V'(0) = 0``; the characteristic function is ``G = -V'(1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import (Constant, Dirac, Field, Grid, ModelParams, SelectionProfile, inner_product,
                   realize_initial)

# switch to a Taylor expansion of the entire functions below this |w2 x^2|
_SERIES_CUTOFF = 1e-3


def cos_like(w2, x):
    """Entire function ``cos(sqrt(w2) x)``; becomes ``cosh`` for ``w2 < 0``."""
    w2 = np.asarray(w2, dtype=float)
    x = np.asarray(x, dtype=float)
    w2, x = np.broadcast_arrays(w2, x)
    z = w2 * x * x
    out = np.empty(z.shape)
    small = np.abs(z) < _SERIES_CUTOFF
    pos = ~small & (z > 0)
    neg = ~small & (z < 0)
    out[small] = 1 - z[small] / 2 + z[small] ** 2 / 24 - z[small] ** 3 / 720
    out[pos] = np.cos(np.sqrt(w2[pos]) * x[pos])
    out[neg] = np.cosh(np.sqrt(-w2[neg]) * x[neg])
    return out if out.ndim else float(out)


def sin_like(w2, x):
    """Entire function ``sin(sqrt(w2) x) / sqrt(w2)`` (``sinh`` form for ``w2 < 0``)."""
    w2 = np.asarray(w2, dtype=float)
    x = np.asarray(x, dtype=float)
    w2, x = np.broadcast_arrays(w2, x)
    z = w2 * x * x
    out = np.empty(z.shape)
    small = np.abs(z) < _SERIES_CUTOFF
    pos = ~small & (z > 0)
    neg = ~small & (z < 0)
    zs = z[small]
    out[small] = x[small] * (1 - zs / 6 + zs ** 2 / 120 - zs ** 3 / 5040)
    r = np.sqrt(w2[pos])
    out[pos] = np.sin(r * x[pos]) / r
    r = np.sqrt(-w2[neg])
    out[neg] = np.sinh(r * x[neg]) / r
    return out if out.ndim else float(out)


def _omegas(lam, params: ModelParams):
    lam = np.asarray(lam, dtype=float)
    return (lam - params.s0) / params.mu, lam / params.mu


def characteristic_value(lam, params: ModelParams):
    """Pole-free characteristic function ``G(Lambda)``.

    ``G = w0 sin(w0 eps) cos(w1 (1-eps)) + w1 cos(w0 eps) sin(w1 (1-eps))``
    with ``w0^2 = (Lambda - s0)/mu`` and ``w1^2 = Lambda/mu``, written in terms
    of entire functions of ``w^2`` so both the trigonometric and the hyperbolic
    branch use real arithmetic.  Eigenvalues are exactly the zeros of ``G``.
    """
    w0sq, w1sq = _omegas(lam, params)
    eps = params.eps
    return (w0sq * sin_like(w0sq, eps) * cos_like(w1sq, 1 - eps)
            + w1sq * cos_like(w0sq, eps) * sin_like(w1sq, 1 - eps))


def transfer_eigenfunction(lam: float, params: ModelParams, x):
    """Unnormalized solution with ``V(0) = 1, V'(0) = 0`` at spectral value ``lam``."""
    x = np.asarray(x, dtype=float)
    w0sq, w1sq = _omegas(lam, params)
    eps = params.eps
    inside = cos_like(w0sq, np.minimum(x, eps))
    c0 = cos_like(w0sq, eps)
    dv = -w0sq * sin_like(w0sq, eps)  # V'(eps)
    y = np.maximum(x - eps, 0.0)
    outside = c0 * cos_like(w1sq, y) + dv * sin_like(w1sq, y)
    return np.where(x <= eps, inside, outside)


def _gauss_pieces(lam: float, params: ModelParams):
    """Gauss-Legendre nodes/weights resolving the eigenfunction on each smooth piece."""
    w0sq, w1sq = _omegas(lam, params)
    eps = params.eps
    xs, ws = [], []
    for a, b, wsq in ((0.0, eps, w0sq), (eps, 1.0, w1sq)):
        if b <= a:
            continue
        n = 48 + int(math.sqrt(abs(wsq)) * (b - a))
        t, w = np.polynomial.legendre.leggauss(n)
        xs.append(0.5 * (b - a) * t + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Exact eigenpair; ``vector`` is L2-normalized with ``vector(0) > 0``."""

    k: int
    lam: float
    vector: Field
    params: ModelParams = field(repr=False)
    scale: float = field(repr=False, default=1.0)

    def __call__(self, x):
        """Analytic evaluation of the normalized eigenfunction."""
        return transfer_eigenfunction(self.lam, self.params, x) / self.scale

    def integrate(self, func) -> float:
        """``int_0^1 func(x) V(x) dx`` by piecewise Gauss quadrature."""
        x, w = _gauss_pieces(self.lam, self.params)
        return float(np.sum(w * func(x) * self(x)))

    def selection_overlap(self) -> float:
        """``<V, s>`` in closed form."""
        w0sq, _ = _omegas(self.lam, self.params)
        return self.params.s0 * sin_like(w0sq, self.params.eps) / self.scale


def count_sign_changes(values) -> int:
    v = np.asarray(values)
    v = v[v != 0]
    return int(np.count_nonzero(np.signbit(v[1:]) != np.signbit(v[:-1])))


class RootCountError(RuntimeError):
    """The bracketing scan missed or duplicated an eigenvalue."""


def _scan_roots(params: ModelParams, K: int, step: float):
    lam_max = params.s0 + params.mu * (K * math.pi) ** 2 + 2 * step
    grid = np.arange(-step, lam_max + step, step)
    g = characteristic_value(grid, params)
    idx = np.nonzero(np.signbit(g[1:]) != np.signbit(g[:-1]))[0]
    roots = []
    for i in idx[:K]:
        a, b = grid[i], grid[i + 1]
        if g[i + 1] == 0.0:
            roots.append(b)
            continue
        tol = 1e-12 * max(1.0, abs(b))
        roots.append(optimize.brentq(characteristic_value, a, b, args=(params,),
                                     xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))
    return roots


def _zero_count(lam: float, params: ModelParams, k: int) -> int:
    x = np.linspace(0.0, 1.0, 64 * (k + 2) + 1)
    return count_sign_changes(transfer_eigenfunction(lam, params, x))


def eigenvalues_exact(params: ModelParams, K: int) -> np.ndarray:
    """First ``K`` eigenvalues, bracketed by a scan of ``G`` and refined by Brent's method.

    Every root is checked against the zero count of its eigenfunction; on a
    mismatch the scan step is halved (twice at most).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    step = params.mu * math.pi ** 2 / 8
    if params.s0 > 0:
        step = min(step, params.s0 / 8)
    for _ in range(3):
        roots = _scan_roots(params, K, step)
        bad = [k for k, lam in enumerate(roots) if _zero_count(lam, params, k) != k]
        if len(roots) == K and not bad:
            return np.array(roots)
        step /= 2
    raise RootCountError(
        f"found {len(roots)} of {K} eigenvalues; zero-count mismatch at modes {bad} "
        f"after refining the scan step to {step:.3e}")


def _l2_scale(lam: float, params: ModelParams) -> float:
    x, w = _gauss_pieces(lam, params)
    return math.sqrt(float(np.sum(w * transfer_eigenfunction(lam, params, x) ** 2)))


def eigs_exact(params: ModelParams, K: int, grid: Grid) -> list[EigenPair]:
    """First ``K`` exact eigenpairs of ``-mu V'' + s V = Lambda V`` sampled on ``grid``."""
    pairs = []
    for k, lam in enumerate(eigenvalues_exact(params, K)):
        scale = _l2_scale(lam, params)
        vec = Field(grid, transfer_eigenfunction(lam, params, grid.nodes) / scale)
        pairs.append(EigenPair(k, float(lam), vec, params, scale))
    return pairs


@dataclass(frozen=True, eq=False)
class AsymptoticEigen:
    """First-order narrow-window expansion ``lambda0 + eps * lambda1`` of one mode."""

    k: int
    lambda0: float
    lambda1: float
    lam: float
    v0: Field
    v1: Field


def _v0(k, x):
    return np.ones_like(x) if k == 0 else math.sqrt(2) * np.cos(k * math.pi * x)


def _v1_raw(k, x, sbar, mu):
    if k == 0:
        return -(sbar / mu) * x ** 2 / 2
    dv0 = -math.sqrt(2) * k * math.pi * np.sin(k * math.pi * x)
    return -(sbar / mu) * ((1 - x) * dv0 / (k * math.pi) ** 2 + x * _v0(k, x))


def eigs_asymptotic(params: ModelParams, K: int, grid: Grid) -> list[AsymptoticEigen]:
    """Leading-order eigenpairs of the narrow-window expansion.

    ``v1`` is made orthogonal to ``v0``; for ``k = 0`` this adds the constant
    ``sbar / (6 mu)``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    sbar = params.selection().mean_fast
    t, w = np.polynomial.legendre.leggauss(64 + 2 * K)
    xq, wq = 0.5 * (t + 1), 0.5 * w
    out = []
    for k in range(K):
        lambda0 = params.mu * (k * math.pi) ** 2
        lambda1 = sbar * _v0(k, np.zeros(1))[0] ** 2  # ||v0|| = 1
        v0q = _v0(k, xq)
        shift = -np.sum(wq * _v1_raw(k, xq, sbar, params.mu) * v0q)
        x = grid.nodes
        v1 = _v1_raw(k, x, sbar, params.mu) + shift * _v0(k, x)
        out.append(AsymptoticEigen(k, lambda0, lambda1, lambda0 + params.eps * lambda1,
                                   Field(grid, _v0(k, x)), Field(grid, v1)))
    return out


def corrector_pi2(y, mu: float = 1.0, s_fast: SelectionProfile | None = None):
    """Boundary-layer corrector ``pi2(y) = (1/mu) int_0^y int_0^z s``, with ``pi2(0) = 0``.

    ``s_fast`` is the profile in the fast variable; the default is 1 on [0, 1].
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("corrector is defined for y >= 0")
    if s_fast is None:
        s_fast = SelectionProfile((0.0, 1.0), (1.0,))
    out = np.zeros_like(y)
    for (a, b), v in zip(s_fast.intervals(), s_fast.values):
        a, b = max(a, 0.0), b
        if b <= a or v == 0:
            continue
        L = b - a
        u = np.clip(y - a, 0.0, None)
        out += v * np.where(u <= L, u ** 2 / 2, L ** 2 / 2 + L * (u - L))
    out = out / mu
    return out if out.ndim else float(out)


def corrector_pi2_derivative(y, mu: float = 1.0, s_fast: SelectionProfile | None = None):
    """``d pi2 / dy = (1/mu) int_0^y s``; saturates at ``sbar / mu`` past the window."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("corrector is defined for y >= 0")
    if s_fast is None:
        s_fast = SelectionProfile((0.0, 1.0), (1.0,))
    out = np.zeros_like(y)
    for (a, b), v in zip(s_fast.intervals(), s_fast.values):
        a = max(a, 0.0)
        if b > a:
            out += v * np.clip(y - a, 0.0, b - a)
    out = out / mu
    return out if out.ndim else float(out)


# --- modal reconstruction ---------------------------------------------------

@dataclass(frozen=True)
class ModalCoefficients:
    """Projections ``alpha_k = <n_I, V_k>``, ``s_k = <V_k, s>`` and the eigenvalues."""

    alpha: np.ndarray
    s_k: np.ndarray
    lam: np.ndarray
    nI_norm: float

    def growth(self, b: float) -> np.ndarray:
        """``Lambda^0_k = b - Lambda_k``."""
        return b - self.lam

    def phi(self, b: float) -> np.ndarray:
        g = self.growth(b)
        if np.any(np.abs(g) < 1e-10):
            raise ZeroDivisionError("b coincides with an eigenvalue; phi_k undefined")
        return self.alpha * self.s_k / g


def modal_coefficients(initial, pairs: list[EigenPair], grid: Grid | None = None
                       ) -> ModalCoefficients:
    """Project initial data on the eigenbasis.

    Constant and Dirac data are projected exactly; sampled or random data use
    the trapezoidal inner product on their grid (the pairs' grid by default).
    """
    grid = grid or pairs[0].vector.grid
    s_k = np.array([p.selection_overlap() for p in pairs])
    lam = np.array([p.lam for p in pairs])
    if isinstance(initial, Constant):
        alpha = np.array([p.integrate(lambda x: np.full_like(x, initial.c)) for p in pairs])
        norm = abs(initial.c)
    elif isinstance(initial, Dirac):
        alpha = np.array([float(p(initial.z)) for p in pairs])
        norm = math.inf
    else:
        f = realize_initial(initial, grid)
        alpha = np.array([inner_product(f, Field(grid, p(grid.nodes))) for p in pairs])
        norm = f.norm()
    return ModalCoefficients(alpha, s_k, lam, norm)


def modal_solution(coeffs: ModalCoefficients, pairs: list[EigenPair], b: float, t: float):
    """Truncated modal sum of the pre-threshold solution.

    Returns the field and the bound ``||n_I|| exp((b - Lambda_K) t)`` on the
    dropped tail.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    grid = pairs[0].vector.grid
    amp = coeffs.alpha * np.exp(coeffs.growth(b) * t)
    vals = np.zeros(grid.n_nodes)
    for a, p in zip(amp, pairs):
        vals += a * p.vector.values
    remainder = coeffs.nI_norm * math.exp((b - pairs[-1].lam) * t)
    return Field(grid, vals), remainder


def _rho_terms(coeffs: ModalCoefficients, b: float, t):
    g = coeffs.growth(b)
    t = np.asarray(t, dtype=float)[..., None]
    ws = coeffs.alpha * coeffs.s_k
    degenerate = np.abs(g) < 1e-10
    safe = np.where(degenerate, 1.0, g)
    return np.where(degenerate, ws * t, ws * np.expm1(g * t) / safe)


def rho_spectral(coeffs: ModalCoefficients, pairs, b: float, t):
    """``rho(t) = sum_k phi_k (exp(Lambda^0_k t) - 1)``, summed in ascending ``k``.

    Modes with ``|b - Lambda_k| < 1e-10`` contribute their limit ``alpha_k s_k t``.
    """
    out = np.sum(_rho_terms(coeffs, b, t), axis=-1)
    return out if np.ndim(out) else float(out)


def rho_spectral_rate(coeffs: ModalCoefficients, b: float, t):
    """``d rho / dt = sum_k alpha_k s_k exp(Lambda^0_k t)``."""
    t = np.asarray(t, dtype=float)[..., None]
    out = np.sum(coeffs.alpha * coeffs.s_k * np.exp(coeffs.growth(b) * t), axis=-1)
    return out if np.ndim(out) else float(out)


class ThresholdUnreachable(ValueError):
    """The selected population never reaches the requested threshold."""


def rho_limit(coeffs: ModalCoefficients, b: float) -> float:
    """``lim_{t->inf} rho(t)``; ``inf`` when a mode with positive weight does not decay."""
    ws = coeffs.alpha * coeffs.s_k
    g = coeffs.growth(b)
    live = np.abs(ws) > 1e-14 * max(1.0, np.abs(ws).max())
    if not live.any():
        return 0.0
    lead = np.argmax(np.where(live, g, -np.inf))
    if g[lead] >= -1e-10:
        return math.inf if ws[lead] > 0 else -math.inf
    return float(np.sum(ws[live] / -g[live]))


def time_to_threshold_spectral(coeffs: ModalCoefficients, pairs, b: float, rho0: float) -> float:
    """Solve ``rho(t) = rho0`` by bracketing, Brent's method and a Newton polish."""
    limit = rho_limit(coeffs, b)
    if limit <= rho0:
        raise ThresholdUnreachable(
            f"rho(t) saturates at {limit:.6g} <= rho0 = {rho0:.6g}")
    f = lambda t: rho_spectral(coeffs, pairs, b, t) - rho0  # noqa: E731
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e8:
            raise ThresholdUnreachable("no crossing before t = 1e8")
    t = optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        r = f(t)
        if abs(r) <= 1e-12 * rho0:
            break
        t -= r / rho_spectral_rate(coeffs, b, t)
    return float(t)


# --- homogeneous Neumann modes and the large-mu cascade ----------------------

def neumann_mode(k: int, x):
    """Normalized eigenfunction ``v_k`` of ``-d^2/dx^2`` with Neumann ends."""
    return _v0(k, np.asarray(x, dtype=float))


def overlap_matrix(s: SelectionProfile, K: int) -> np.ndarray:
    """``M_ik = <s v_i, v_k>`` for the first ``K`` Neumann modes, in closed form."""
    c = np.where(np.arange(K) == 0, 1.0, math.sqrt(2.0))

    def cos_integral(m, a, b):
        # int_a^b cos(m pi x) dx, elementwise in m
        m = np.asarray(m, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (np.sin(m * math.pi * b) - np.sin(m * math.pi * a)) / (m * math.pi)
        return np.where(m == 0, b - a, val)

    i, k = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    out = np.zeros((K, K))
    for (a, b), v in zip(s.intervals(), s.values):
        a, b = max(a, 0.0), min(b, 1.0)
        if b <= a or v == 0:
            continue
        out += v * 0.5 * (cos_integral(i - k, a, b) + cos_integral(i + k, a, b))
    out *= np.outer(c, c)
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Cascade:
    """Polynomial-exponential representation of the cascade amplitudes.

    ``gamma_{j,k}(t) = sum_m sum_p coef[j, k, m, p] t^p exp(-lam_m t)``.
    """

    coef: np.ndarray
    lam: np.ndarray

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        powers = t[None, :] ** np.arange(self.coef.shape[-1])[:, None]  # (P, T)
        decay = np.exp(-np.outer(self.lam, t))  # (K, T)
        return np.einsum("jkmp,pt,mt->jkt", self.coef, powers, decay)

    def norms(self, t):
        """``||N_j(t)||_{L2}`` for every order ``j``."""
        return np.sqrt(np.sum(self(t) ** 2, axis=1))


def modal_cascade(nI_modes, M: np.ndarray, shift: float, J: int, t_grid=None, lam=None):
    """Solve ``dG_j/dt + diag(lam) G_j = (shift - M) G_{j-1}``, ``G_j(0) = 0``.

    ``G_0(t) = nI_modes * exp(-lam t)``.  Each mode is a scalar linear ODE with
    polynomial-exponential forcing, integrated exactly.  ``lam`` defaults to
    ``(k pi)^2`` (unit diffusion, time in units of ``1/mu``).  Returns the
    :class:`Cascade`, or its values on ``t_grid`` (shape ``(J+1, K, T)``) when
    a grid is given.
    """
    nI = np.asarray(nI_modes, dtype=float)
    K = nI.size
    if lam is None:
        lam = (np.arange(K) * math.pi) ** 2
    lam = np.asarray(lam, dtype=float)
    B = shift * np.eye(K) - M
    P = J + 2
    coef = np.zeros((J + 1, K, K, P))
    coef[0, np.arange(K), np.arange(K), 0] = nI
    for j in range(1, J + 1):
        forcing = np.einsum("ki,imp->kmp", B, coef[j - 1])
        for k in range(K):
            c0 = 0.0
            for m in range(K):
                f = forcing[k, m]
                if not f.any():
                    continue
                q = np.zeros(P)
                if m == k:
                    q[1:] = f[:-1] / np.arange(1, P)
                else:
                    delta = lam[k] - lam[m]
                    for p in range(P - 1, -1, -1):
                        nxt = (p + 1) * q[p + 1] if p + 1 < P else 0.0
                        q[p] = (f[p] - nxt) / delta
                    c0 -= q[0]
                coef[j, k, m] += q
            coef[j, k, k, 0] += c0
    cascade = Cascade(coef, lam)
    return cascade if t_grid is None else cascade(t_grid)
