import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import erfc

from gcselect import fem, green
from gcselect.core import Dirac, Domain, Field, Grid, ModelParams, SelectionProfile, loglog_slope

MUS = np.logspace(-2, 2, 20)


def params(mu=1.0, Q0=2.0, eps=0.1, rho0=1.0, s0=1.0):
    return ModelParams(Q0=Q0, Q1=0.0, d=0.0, mu=mu, eps=eps, rho0=rho0, s0=s0)


def setup(mu=1.0, z=0.5, domain=Domain.BOUNDED_UNIT, **kw):
    return green.DiracSetup(z, params(mu, **kw), domain)


def test_setup_requires_founder_beyond_window():
    with pytest.raises(ValueError):
        setup(z=0.05)
    with pytest.raises(ValueError):
        setup(z=1.5)
    assert setup(z=1.5, domain=Domain.WHOLE_LINE).window == (-0.1, 0.1)


def test_free_kernel_unit_mass_and_symmetry():
    mu, t, z = 0.7, 0.3, 0.2
    half = 20 * math.sqrt(mu * t)
    mass, _ = integrate.quad(lambda x: green.kernel_free(t, x, z, mu, 0.0), z - half, z + half,
                             epsabs=1e-13)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert green.kernel_free(t, 0.9, z, mu, 1.0) == pytest.approx(
        green.kernel_free(t, z, 0.9, mu, 1.0), rel=1e-15)
    with pytest.raises(ValueError):
        green.kernel_free(0.0, 0.1, 0.2, mu, 1.0)


def _stencil_residual(kernel, h, t=0.2, x=0.35, z=0.6, mu=0.8, b=1.3):
    dt = (kernel(t + h, x) - kernel(t - h, x)) / (2 * h)
    dxx = (kernel(t, x + h) - 2 * kernel(t, x) + kernel(t, x - h)) / h ** 2
    return abs(dt - mu * dxx - b * kernel(t, x))


@pytest.mark.parametrize("which", ["free", "bounded"])
def test_kernels_solve_heat_equation_at_second_order(which):
    f = green.kernel_free if which == "free" else green.kernel_bounded
    kernel = lambda t, x: float(f(t, x, 0.6, 0.8, 1.3))  # noqa: E731
    hs = [4e-3, 2e-3, 1e-3]
    res = [_stencil_residual(kernel, h) for h in hs]
    assert loglog_slope(hs, res) == pytest.approx(2.0, abs=0.1)


def test_bounded_kernel_unit_mass_and_neumann_ends():
    mu, t, z = 0.5, 0.1, 0.3
    mass, _ = integrate.quad(lambda x: green.kernel_bounded(t, x, z, mu, 0.0), 0, 1,
                             points=[z], epsabs=1e-13)
    assert mass == pytest.approx(1.0, abs=1e-10)
    h = 1e-5
    for end in (0.0, 1.0):
        d = (green.kernel_bounded(t, end + h, z, mu, 0.0)
             - green.kernel_bounded(t, end - h, z, mu, 0.0)) / (2 * h)
        assert abs(d) < 1e-6


def test_bounded_kernel_truncation_is_converged():
    for mu, t in ((1e-3, 0.1), (1.0, 1.0), (50.0, 5.0)):
        auto = green.kernel_bounded(t, 0.2, 0.7, mu, 0.0)
        n = green._n_images(mu, t)
        wide = green.kernel_bounded(t, 0.2, 0.7, mu, 0.0, n_images=n + 20)
        assert auto == pytest.approx(wide, rel=1e-13)


def test_bounded_kernel_matches_fem_diffusion():
    # b = 0, s = 0: the FEM solution from a point mass approaches the Neumann kernel;
    # dt ~ h^2 because rough data excite modes the implicit step damps at O(dt)
    p = params(mu=0.5, Q0=0.0)
    t = 0.05
    errs = []
    for n in (50, 100, 200):
        grid = Grid(n)
        rec = fem.run(Dirac(0.5), p, fem.FemConfig(grid, dt=0.5 / n ** 2, t_max=t),
                      selection=SelectionProfile.zero())
        exact = green.kernel_bounded(t, grid.nodes, 0.5, 0.5, 0.0)
        errs.append(Field(grid, rec.final_state.values - exact).norm())
    assert loglog_slope([1 / 50, 1 / 100, 1 / 200], errs) >= 1.8


def test_window_mass_matches_kernel_quadrature():
    s = setup(mu=0.3)
    for t in (0.05, 0.5, 3.0):
        quad, _ = integrate.quad(lambda x: green.kernel_bounded(t, x, 0.5, 0.3, 2.0), 0, 0.1,
                                 epsabs=1e-14, epsrel=1e-12)
        assert green.window_mass(t, s, 2.0) == pytest.approx(quad, rel=1e-10)
    assert green.window_mass(0.0, s, 2.0) == 0.0


def _erfc_series(x: Fraction) -> float:
    # erfc(x) = 1 - (2/sqrt(pi)) sum_n (-1)^n x^(2n+1) / (n! (2n+1)), 30 terms, exact rationals
    total = Fraction(0)
    for n in range(30):
        total += Fraction((-1) ** n, math.factorial(n) * (2 * n + 1)) * x ** (2 * n + 1)
    return 1.0 - 2.0 / math.sqrt(math.pi) * float(total)


@pytest.mark.parametrize("k", range(10))
def test_erfc_against_power_series(k):
    x = Fraction(3 * k, 20)  # 0 .. 1.35
    assert erfc(float(x)) == pytest.approx(_erfc_series(x), rel=1e-12, abs=1e-15)


def test_rho_dirac_sandwiches_fem():
    s = setup(mu=1.0)
    times = np.linspace(0.25, 2.0, 8)
    rec = fem.run(Dirac(0.5), params(mu=1.0, rho0=1e9),
                  fem.FemConfig(Grid(400), dt=1e-3, t_max=2.0))
    assert green.rho_dirac(s, 0.0) == (0.0, 0.0)
    prev = (0.0, 0.0)
    for t in times:
        lo, hi = green.rho_dirac(s, t)
        r = float(np.interp(t, rec.times, rec.rho_series))
        assert lo <= r <= hi
        assert lo >= prev[0] and hi >= prev[1]
        prev = (lo, hi)
    with pytest.raises(ValueError):
        green.rho_dirac(s, -1.0)


@pytest.mark.parametrize("a", [0.0, 1.0])
@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
def test_j_lower_bound_below_quadrature(a, t):
    assert green.j_integral(a, t) >= green.j_lower_bound(a, t)


@given(st.floats(1e-2, 50.0), st.floats(1.001, 3.0))
@settings(max_examples=50, deadline=None)
def test_j_lower_bound_monotone_and_vanishing(t, factor):
    assert green.j_lower_bound(0.0, t * factor) > green.j_lower_bound(0.0, t)
    assert green.j_lower_bound(0.0, 0.0) == 0.0
    assert green.j_lower_bound(0.0, 1e-3) == 0.0  # exp(-2000) underflows


def test_kernel_bounds_enclose_kernel():
    s = setup(mu=1.0)
    xs = np.linspace(0.0, 0.1, 11)
    for t in np.logspace(-4, 1, 26):
        k = green.kernel_bounded(t, xs, 0.5, 1.0, 2.0)
        up = green.kernel_bound_upper(t, xs, 0.5, s)
        low = green.kernel_bound_lower(t, xs, 0.5, 1.0, 2.0)
        assert np.all(k <= up * (1 + 1e-12) + 1e-300)
        assert np.all(low <= k * (1 + 1e-12) + 1e-300)
    assert np.all(green.kernel_bound_upper(1.0, xs, 0.5, s, b=3.0)
                  > green.kernel_bound_upper(1.0, xs, 0.5, s, b=2.0))
    with pytest.raises(ValueError):
        green.kernel_bound_upper(1.0, 0.5, 0.5, s)


def test_kernel_lower_bound_long_time_and_origin():
    late = green.kernel_bound_lower(1e8, 0.0, 0.0, 1.0, 0.0)
    expected = 1 / math.sqrt(4 * math.pi * 1e8) + erfc(math.sqrt(3e-8)) / (4 * math.sqrt(3))
    assert late == pytest.approx(expected, rel=1e-12)
    assert late == pytest.approx(1 / (4 * math.sqrt(3)), rel=1e-3)
    vals = green.kernel_bound_lower(0.7, np.linspace(0, 0.5, 6), 0.0, 1.0, 1.5)
    assert vals[0] == vals.max()


def test_free_bounds_sandwich_quadrature_times():
    for mu in MUS:
        s = setup(mu, domain=Domain.WHOLE_LINE)
        t_Iu, t_Il = green.kernel_threshold_times(s, 1.0)
        bp = green.bounds_free(s, 1.0)
        assert 0 < bp.t_l <= t_Il
        assert t_Iu <= bp.t_u


def test_bounded_bounds_sandwich_quadrature_times():
    for mu in MUS:
        s = setup(mu)
        t_Iu, t_Il = green.kernel_threshold_times(s, 1.0)
        bp = green.bounds_bounded(s, 1.0)
        assert 0 < bp.t_l <= t_Iu <= t_Il <= bp.t_u
        assert bp.t_u <= bp.t_u_inf


def test_displayed_constants_can_fail_to_bound():
    # evaluating the closed forms with the displayed constants breaks the bracket
    s = setup(0.0695, domain=Domain.WHOLE_LINE)
    t_Iu, _ = green.kernel_threshold_times(s, 1.0)
    assert green.bounds_free(s, 1.0, constants="displayed").t_u < t_Iu
    assert green.bounds_free(s, 1.0).t_u > t_Iu
    with pytest.raises(ValueError):
        green.bounds_bounded(setup(), 1.0, constants="other")


@pytest.mark.parametrize("fn,domain", [(green.bounds_free, Domain.WHOLE_LINE),
                                       (green.bounds_bounded, Domain.BOUNDED_UNIT)])
def test_lower_bound_diverges_like_inverse_sqrt_mu(fn, domain):
    mus = np.logspace(-4, -2, 5)
    t_l = [fn(setup(m, domain=domain), 1.0).t_l for m in mus]
    assert loglog_slope(mus, t_l) == pytest.approx(-0.5, abs=0.05)
    t_u = [fn(setup(m, domain=domain), 1.0).t_u for m in mus]
    assert np.all(np.diff(t_u) < 0)


def test_free_upper_bound_grows_slowly_for_large_mu():
    mus = np.logspace(1, 4, 7)
    t_u = [green.bounds_free(setup(m, domain=Domain.WHOLE_LINE), 1.0).t_u for m in mus]
    assert np.all(np.diff(t_u) > 0)
    assert loglog_slope(mus, t_u) < 1 / 3


def test_large_mu_limits_of_displayed_bounds():
    s = setup(1e8)
    lower, upper = green.bounded_limits(s, 1.0)
    bp = green.bounds_bounded(s, 1.0, constants="displayed")
    assert bp.t_l == pytest.approx(lower, rel=1e-3)
    assert lower == pytest.approx(math.log(math.sqrt(2 * math.pi * 0.9) / 0.1) / 3, rel=1e-15)
    assert upper == pytest.approx(math.log(1 + 4 * math.sqrt(3) * 10) / 1.0, rel=1e-15)


def test_whole_line_bound_improves_small_mu():
    bp = green.bounds_bounded(setup(0.01), 1.0)
    assert bp.branch.endswith("+whole-line")
    assert bp.t_u == bp.t_u_inf


def test_upper_bound_absent_without_net_growth():
    bp = green.bounds_bounded(setup(1.0, Q0=0.5), 1.0)
    assert bp.t_u is None and bp.t_l > 0
