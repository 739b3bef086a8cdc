"""Heat kernels and two-sided threshold-time bounds for a point-mass founder population.

The exact Dirac solution is squeezed between the heat kernels with growth
rates ``b - s_inf`` and ``b``; integrating those kernels over the selection
window brackets ``rho(t)``.  Closed-form bounds on the threshold time follow
from cruder estimates of the same integrals.

Two sets of constants are available for the closed forms.  ``"displayed"``
evaluates the formulas as usually quoted for this model.  ``"derived"``
re-derives every constant from the same chain of inequalities (window mass,
Gaussian normalization, the Jensen-type bound on ``J_a``); a few displayed
prefactors are off by factors of ``2``, ``sqrt(pi)`` or ``eps`` and can
then fail to bound the true threshold time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf, erfc

from .core import Domain, ModelParams

K_RANGE = range(0, 9)
_SQRT_PI = math.sqrt(math.pi)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


@dataclass(frozen=True)
class DiracSetup:
    """A unit point mass at ``z``, outside the selection window."""

    z: float
    params: ModelParams
    domain: Domain = Domain.BOUNDED_UNIT

    def __post_init__(self):
        eps = self.params.eps
        if not self.z > eps:
            raise ValueError(f"founder trait z={self.z} must lie beyond the window eps={eps}")
        if self.domain is Domain.BOUNDED_UNIT and not self.z < 1:
            raise ValueError(f"z={self.z} must lie inside (eps, 1) on the bounded domain")

    @property
    def s_inf(self) -> float:
        return self.params.s0

    @property
    def window(self) -> tuple[float, float]:
        eps = self.params.eps
        return (0.0, eps) if self.domain is Domain.BOUNDED_UNIT else (-eps, eps)


@dataclass(frozen=True)
class BoundPair:
    """Closed-form bracket ``t_l <= t_rho0 <= t_u``; ``None`` marks an unavailable bound."""

    t_l: float
    t_u: float | None
    t_u_inf: float | None = None
    branch: str = ""


# --- kernels ----------------------------------------------------------------

def _check_t(t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("kernels are defined for t > 0 only")


def kernel_free(t, x, z, mu: float, b: float):
    """Whole-line heat kernel with growth rate ``b``."""
    _check_t(t)
    t = np.asarray(t, float)
    return np.exp(b * t - (np.asarray(x) - z) ** 2 / (4 * mu * t)) / np.sqrt(4 * math.pi * mu * t)


def _n_images(mu: float, t: float) -> int:
    # every image beyond |n| = N sits at distance >= 2N - 2 from [0, 1]
    sigma = math.sqrt(4 * mu * t)
    return 2 + math.ceil(0.5 * sigma * math.sqrt(math.log(1e14) + math.log(2 + sigma)))


def image_centers(z: float, n_images: int) -> np.ndarray:
    """Image positions ``2n -+ z`` ordered by ascending ``|n|``."""
    ns = [0] + [m for k in range(1, n_images + 1) for m in (k, -k)]
    return np.array([c for n in ns for c in (2 * n - z, 2 * n + z)])


def kernel_bounded(t, x, z, mu: float, b: float, n_images: int | None = None):
    """Neumann heat kernel on [0, 1] by the method of images.

    With ``n_images=None`` the truncation is chosen from the Gaussian tail so
    that the dropped images are below ``1e-14`` of the retained sum.
    """
    _check_t(t)
    t = float(t)
    if n_images is None:
        n_images = _n_images(mu, t)
    x = np.asarray(x, float)
    centers = image_centers(z, n_images)
    g = np.exp(-(x[..., None] - centers) ** 2 / (4 * mu * t)).sum(axis=-1)
    return math.exp(b * t) * g / math.sqrt(4 * math.pi * mu * t)


def window_mass(t: float, setup: DiracSetup, rate: float) -> float:
    """``int_window s(x) G_rate(t, x, z) dx`` in closed form through ``erf``."""
    if t <= 0:
        return 0.0
    mu, z, s0 = setup.params.mu, setup.z, setup.s_inf
    lo, hi = setup.window
    sigma = math.sqrt(4 * mu * t)
    if setup.domain is Domain.WHOLE_LINE:
        centers = np.array([z])
    else:
        centers = image_centers(z, _n_images(mu, t))
    total = 0.5 * (erf((hi - centers) / sigma) - erf((lo - centers) / sigma)).sum()
    return s0 * math.exp(rate * t) * float(total)


def _quad(func, a, b, what):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(func, a, b, epsabs=1e-13, epsrel=1e-10, limit=400)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"{what} on [{a:.6g}, {b:.6g}]: {exc}") from None
    return val


def rho_dirac(setup: DiracSetup, t: float) -> tuple[float, float]:
    """Bracket ``(rho_lower, rho_upper)`` of the selected mass from a point mass.

    Both components integrate the window mass of a comparison kernel, with
    rates ``b - s_inf`` and ``b`` respectively.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0.0, 0.0
    b = setup.params.b
    out = []
    for rate, name in ((b - setup.s_inf, "lower kernel"), (b, "upper kernel")):
        out.append(_quad(lambda u: window_mass(u, setup, rate), 0.0, t, name))
    return out[0], out[1]


def kernel_threshold_times(setup: DiracSetup, rho0: float, t_cap: float = 1e3
                           ) -> tuple[float, float | None]:
    """Threshold times of ``rho_upper`` and ``rho_lower``; they bracket the true time."""
    res = []
    for idx in (1, 0):
        def f(t, idx=idx):
            return rho_dirac(setup, t)[idx] - rho0
        hi = 1.0
        while f(hi) < 0 and hi < t_cap:
            hi *= 2
        if f(hi) < 0:
            res.append(None)
            continue
        res.append(optimize.brentq(f, 0.0 if hi == 1.0 else hi / 2, hi, xtol=1e-12, rtol=1e-12))
    return res[0], res[1]


# --- elementary bounds ------------------------------------------------------

def j_integral(a: float, t: float) -> float:
    """``J_a(t) = int_0^t exp(a u - 1/u) du / sqrt(u)`` by adaptive quadrature."""
    if t <= 0:
        return 0.0
    return _quad(lambda u: math.exp(a * u - 1.0 / u) / math.sqrt(u) if u > 0 else 0.0,
                 0.0, t, "J_a")


def j_lower_bound(a: float, t: float) -> float:
    """Lower bound ``exp(-2/t) / (2e)`` of ``J_a(t)``, valid for ``a >= 0``."""
    if t <= 0:
        return 0.0
    return math.exp(-2.0 / t) / (2 * math.e)


def kernel_bound_upper(t, x, z, setup: DiracSetup, b: float | None = None):
    """Uniform upper bound of the Neumann kernel for ``x`` inside and ``z`` beyond the window."""
    eps, mu = setup.params.eps, setup.params.mu
    b = setup.params.b if b is None else b
    x = np.asarray(x, float)
    if np.any((x < 0) | (x > eps)) or not eps < z < 1:
        raise ValueError("need x in (0, eps) and z in (eps, 1)")
    _check_t(t)
    t = np.asarray(t, float)
    return np.exp(b * t - (z - eps) ** 2 / (4 * mu * t)) * (
        4 / np.sqrt(4 * math.pi * mu * t) + 2 / math.sqrt(2 * (1 - eps))) + 0 * x


def kernel_bound_lower(t, x, z, mu: float, b: float):
    """Lower bound of the Neumann kernel keeping one direct image and a tail estimate."""
    _check_t(t)
    t = np.asarray(t, float)
    return np.exp(b * t - (np.asarray(x) + z) ** 2 / (4 * mu * t)) * (
        1 / np.sqrt(4 * math.pi * mu * t) + erfc(np.sqrt(3 / (mu * t))) / (4 * math.sqrt(3)))


# --- closed-form threshold bounds ---------------------------------------------

def _quadratic_time(log_omega: float, c: float, rate: float) -> float:
    # positive root of rate*t - c/t = log_omega
    return (log_omega + math.sqrt(log_omega ** 2 + 4 * rate * c)) / (2 * rate)


def _power_inverse(k: int, a: float, t0: float, excess: float, pref: float) -> float:
    """Invert ``excess = pref * a^k / (k! (k + 1/2)) * (t^{k+1/2} - t0^{k+1/2})``."""
    p = k + 0.5
    return (p * math.factorial(k) * excess / (pref * a ** k) + t0 ** p) ** (1 / p)


def _best_k(a, t0, excess, pref):
    best = min((_power_inverse(k, a, t0, excess, pref), k) for k in K_RANGE)
    return best


def bounds_free(setup: DiracSetup, rho0: float, constants: str = "derived") -> BoundPair:
    """Closed-form bracket of the threshold time on the whole line, window ``[-eps, eps]``."""
    p = setup.params
    mu, eps, z, b, s = p.mu, p.eps, setup.z, p.b, setup.s_inf
    a = b - s
    w = eps * s if constants == "derived" else eps
    log_omega = math.log(math.sqrt(math.pi * mu) * rho0 / (2 * w))
    t_l = _quadratic_time(log_omega, (z - eps) ** 2 / (4 * mu), b + 1)

    zz = z + eps
    if constants == "derived":
        if a <= 0:
            return BoundPair(t_l, None, branch="none")
        t0 = zz / (2 * math.sqrt(mu * a))
        c1 = w * zz / (4 * mu * math.e * _SQRT_PI)
        pref = w / math.sqrt(math.pi * mu) * math.exp(-a * t0)
    else:
        t0 = zz / (2 * math.sqrt((b + s) * mu))
        c1 = eps * zz / (4 * mu * math.e * _SQRT_PI)
        pref = math.exp(-a * t0) / math.sqrt(mu * math.pi)
    j1_t0 = c1 * math.exp(-zz ** 2 / (2 * mu * t0))
    if rho0 < j1_t0:
        if constants == "derived":
            t_u = zz ** 2 / (2 * mu * math.log(c1 / rho0))
        else:
            t_u = zz ** 2 / (-2 * math.log(rho0 * 4 * math.e * mu / (eps * zz)))
        return BoundPair(t_l, t_u, branch="j1")
    if a <= 0:
        return BoundPair(t_l, None, branch="none")
    t_u, k = _best_k(a, t0, rho0 - j1_t0, pref)
    return BoundPair(t_l, t_u, branch=f"j2(k={k})")


def _corollary_upper(setup: DiracSetup, rho0: float, constants: str):
    p = setup.params
    mu, eps, z, a = p.mu, p.eps, setup.z, p.b - setup.s_inf
    if constants == "derived":
        w = eps * setup.s_inf
        t0 = z / (2 * math.sqrt(mu * a))
        c1 = w * z / (8 * mu * math.e * _SQRT_PI)
        j1_t0 = c1 * math.exp(-z * math.sqrt(a / mu))
        pref = w / (2 * math.sqrt(math.pi * mu)) * math.exp(-a * t0)
        if rho0 < j1_t0:
            return z ** 2 / (2 * mu * math.log(c1 / rho0))
    else:
        t0 = z / (2 * math.sqrt(a))
        j1_t0 = eps * z / (4 * mu * math.e * _SQRT_PI) * math.exp(-z * math.sqrt(a) / math.sqrt(mu))
        pref = math.exp(-a * t0) / math.sqrt(math.pi * mu)
        if rho0 < j1_t0:
            return z ** 2 / (-2 * math.log(rho0 * 4 * math.e * mu / (eps * z)))
    return _best_k(a, t0, rho0 - j1_t0, pref)[0]


def bounds_bounded(setup: DiracSetup, rho0: float, constants: str = "derived") -> BoundPair:
    """Closed-form bracket of the threshold time on [0, 1] with window ``[0, eps]``.

    ``t_u`` comes from the erfc estimate of the reflected kernel, ``t_u_inf``
    from comparison with the whole-line kernel; the reported ``t_u`` is the
    smaller of the two.
    """
    if constants not in ("derived", "displayed"):
        raise ValueError(f"unknown constants {constants!r}")
    p = setup.params
    mu, eps, z, b, s = p.mu, p.eps, setup.z, p.b, setup.s_inf
    a = b - s
    c = (z - eps) ** 2 / (4 * mu)
    if constants == "derived":
        w = eps * s
        log_omega = math.log(rho0 / (w * (4 / math.sqrt(math.pi * mu) + math.sqrt(2 / (1 - eps)))))
        t_l = _quadratic_time(log_omega, c, b + 1)
    else:
        omega = 2 * rho0 * math.sqrt((1 - eps) * mu * math.pi) / (
            eps * (math.sqrt(1 - eps) + math.sqrt(2 * mu)))
        t_l = (math.log(omega) + math.sqrt(math.log(omega) ** 2 + (z - eps) ** 2 / mu)) / (2 * (b + 1))
    if a <= 0:
        return BoundPair(t_l, None, branch="none")

    t0 = z / (2 * math.sqrt(mu * a))
    if constants == "derived":
        c1 = w * z / (8 * mu * math.e * _SQRT_PI)
        tail = w / (4 * math.sqrt(3))
    else:
        c1 = eps * z / (4 * mu * math.e)
        tail = eps / (4 * math.sqrt(3))
    j1_t0 = c1 * math.exp(-z ** 2 / (2 * mu * t0))
    if rho0 < j1_t0:
        branch = "j1"
        if constants == "derived":
            t_u = z ** 2 / (2 * mu * math.log(c1 / rho0))
        else:
            t_u = z ** 2 / (-2 * math.log(rho0 * 4 * math.e * mu / (eps * z)))
    else:
        branch = "erfc"
        ec = float(erfc(math.sqrt(3 / (mu * t0))))
        if ec <= 0:
            t_u = math.inf
        else:
            t_u = t0 + math.log1p(a * (rho0 - j1_t0) / (tail * ec)) / a
    t_u_inf = _corollary_upper(setup, rho0, constants)
    if t_u_inf < t_u:
        branch += "+whole-line"
    return BoundPair(t_l, min(t_u, t_u_inf), t_u_inf, branch)


def bounded_limits(setup: DiracSetup, rho0: float) -> tuple[float, float]:
    """Large-``mu`` limits of the displayed ``t_l`` and of the erfc upper bound."""
    p = setup.params
    a = p.b - setup.s_inf
    lower = math.log(rho0 * math.sqrt(2 * math.pi * (1 - p.eps)) / p.eps) / (p.b + 1)
    upper = math.log1p(4 * math.sqrt(3) * a * rho0 / p.eps) / a
    return lower, upper
