"""Closed-form time-to-threshold estimators in three asymptotic regimes.

* narrow selection window (``eps -> 0``, mutation fast enough to keep the
  lowest mode isolated),
* small mutation rate (selection acts pointwise),
* large mutation rate (the population homogenizes in trait).

Every estimator returns its value together with a validity record; nothing
refuses to compute, but callers (the sweep and validate commands) skip
estimates whose record says they are out of regime.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .core import ModelParams
from .spectral import ThresholdUnreachable

# Regime limits used for the validity flags; they are heuristics, not theorems.
NARROW_EPS_MAX = 0.1
SMALL_MU_MAX = 1e-2
LARGE_MU_MIN = 1.0


class Regime(enum.Enum):
    NARROW_EPS = "narrow_eps"
    SMALL_MU = "small_mu"
    LARGE_MU = "large_mu"


@dataclass(frozen=True)
class Validity:
    """Whether the parameters sit inside the estimator's regime, and why not if they don't."""

    ok: bool
    notes: tuple = ()


@dataclass(frozen=True)
class ThresholdEstimate:
    t_est: float
    regime: Regime
    validity: Validity
    error_order: str


def _log_time(rate: float, rho0: float, source: float) -> float:
    """``(1/rate) ln(1 + rate rho0 / source)`` with the ``rate -> 0`` limit ``rho0/source``."""
    x = rate * rho0 / source
    if abs(rate) < 1e-12:
        return rho0 / source
    if x <= -1:
        raise ThresholdUnreachable(
            f"leading-order rho saturates at {source / -rate:.6g} <= rho0 = {rho0:.6g}")
    return math.log1p(x) / rate


def t_threshold_narrow_eps(params: ModelParams, nI_mass: float) -> ThresholdEstimate:
    """Threshold time for a narrow selection window.

    ``t = (1/b) ln(1 + rho0 b / (eps s0 nbar))`` where ``nbar`` is the total
    initial mass and ``eps * s0`` the integral of the selection profile.
    """
    b = params.b
    if b <= 0:
        raise ValueError(f"narrow-window estimate needs b > 0, got b = {b}")
    if nI_mass <= 0:
        raise ValueError("initial mass must be positive")
    notes = []
    if params.mu <= b / math.pi ** 2:
        notes.append(f"mu = {params.mu:.4g} <= b/pi^2 = {b / math.pi ** 2:.4g}: "
                     "the lowest mode is not separated")
    if params.eps > NARROW_EPS_MAX:
        notes.append(f"eps = {params.eps:.4g} is not small")
    t = _log_time(b, params.rho0, params.eps * params.s0 * nI_mass)
    return ThresholdEstimate(t, Regime.NARROW_EPS, Validity(not notes, tuple(notes)),
                             "sqrt(eps)*|ln eps|")


def t_threshold_narrow_eps_log(params: ModelParams, nI_mass: float) -> ThresholdEstimate:
    """Leading-order logarithmic variant ``(1/b) ln(rho0 b / (eps s0 nbar))``.

    It drops the ``1 +`` inside the logarithm and so agrees with
    :func:`t_threshold_narrow_eps` up to ``O(eps)`` in the argument.
    """
    base = t_threshold_narrow_eps(params, nI_mass)
    b = params.b
    arg = params.rho0 * b / (params.eps * params.s0 * nI_mass)
    if arg <= 1:
        raise ValueError("rho0 too small for the logarithmic form to be positive")
    return ThresholdEstimate(math.log(arg) / b, base.regime, base.validity, base.error_order)


def t_threshold_small_mu(params: ModelParams, s_nI_overlap: float) -> ThresholdEstimate:
    """Threshold time when mutation is negligible.

    Inside the window every cell grows at rate ``b - s0``, so
    ``t = ln(1 + (b - s0) rho0 / int s n_I) / (b - s0)``, with the limit
    ``rho0 / int s n_I`` when ``b = s0``.
    """
    if s_nI_overlap <= 0:
        raise ValueError("initial data do not meet the selection window; "
                         "the leading order never crosses (use the green bounds)")
    notes = []
    if params.mu > SMALL_MU_MAX:
        notes.append(f"mu = {params.mu:.4g} is not small")
    t = _log_time(params.b - params.s0, params.rho0, s_nI_overlap)
    return ThresholdEstimate(t, Regime.SMALL_MU, Validity(not notes, tuple(notes)), "mu")


def t_threshold_large_mu(params: ModelParams, nI_mass: float,
                         M00: float | None = None) -> ThresholdEstimate:
    """Threshold time when mutation homogenizes the population.

    The mean mode grows at ``b - M00`` with ``M00 = int s`` and feeds the
    window at rate ``M00``: ``t = ln(1 + rho0 (b - M00) / (M00 nbar)) / (b - M00)``.
    """
    s_int = params.selection().integral(0.0, 1.0)
    if M00 is None:
        M00 = s_int
    rate = params.b - M00
    if rate <= 0:
        raise ValueError(f"large-mu estimate needs b > M00, got b - M00 = {rate:.6g}")
    if nI_mass <= 0:
        raise ValueError("initial mass must be positive")
    notes = []
    if params.mu < LARGE_MU_MIN:
        notes.append(f"mu = {params.mu:.4g} is below the large-mutation range")
    t = _log_time(rate, params.rho0, s_int * nI_mass)
    return ThresholdEstimate(t, Regime.LARGE_MU, Validity(not notes, tuple(notes)), "1/mu")
