import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from homspde.errors import DegenerateFit, KappaOutOfRange, MonteCarloUnstable, ZeroShift
from homspde.green import GreenSpec
from homspde.kernels import CovarianceSpec, radial_weight, spectral_constant
from homspde import scaling as S

HEAT1, HEAT2, HEAT3 = GreenSpec("heat", 1), GreenSpec("heat", 2), GreenSpec("heat", 3)
WAVE1, WAVE2, WAVE3 = GreenSpec("wave", 1), GreenSpec("wave", 2), GreenSpec("wave", 3)


# -- grids, fits, reports ---------------------------------------------------

def test_eps_grid_invariants():
    g = S.EpsGrid.dyadic()
    assert len(g) == 9 and g.values[0] == 2 ** -4 and g.values[-1] == 2 ** -12
    with pytest.raises(ValueError):
        S.EpsGrid((0.5, 0.25, 0.125))
    with pytest.raises(ValueError):
        S.EpsGrid(tuple(2.0 ** -k for k in range(6))[::-1])
    with pytest.raises(ValueError):
        S.EpsGrid((2.0, 1, 0.5, 0.25, 0.125, 0.0625))


def test_fit_slope_exact_power_law():
    eps = [2.0 ** -k for k in range(4, 13)]
    slope, se = S.fit_slope([(e, e ** 2) for e in eps])
    assert slope == pytest.approx(2.0, abs=1e-12) and se < 1e-10
    slope, se = S.fit_slope([(e, 5 * e ** 0.5) for e in eps])
    assert slope == pytest.approx(0.5, abs=1e-12) and se < 1e-10


@settings(max_examples=50, deadline=None)
@given(p=st.floats(-3, 5), c=st.floats(1e-3, 1e3))
def test_fit_slope_recovers_any_power(p, c):
    eps = [2.0 ** -k for k in range(2, 10)]
    slope, se = S.fit_slope([(e, c * e ** p) for e in eps])
    assert slope == pytest.approx(p, abs=1e-9) and se < 1e-9


def test_fit_slope_degenerate():
    with pytest.raises(DegenerateFit):
        S.fit_slope([(0.1, 1), (0.05, 2), (0.025, 3)])
    with pytest.raises(DegenerateFit):
        S.fit_slope([(0.1, 1)] * 5)
    with pytest.raises(DegenerateFit):
        S.fit_slope([(0.1, 1), (0.05, 0.0), (0.025, 3), (0.01, 1)])


def test_csv_header():
    rep = S.h3_fit(CovarianceSpec.riesz(2, 1.0), HEAT2)
    text = S.reports_to_csv([rep])
    assert text.splitlines()[0] == "kind,family,operator,dim,params,kappa1,kappa2,w,fitted,stderr,expected,pass"
    assert text.splitlines()[1].endswith(",true")


# -- g(eps) -----------------------------------------------------------------

def test_g_heat_riesz_closed_form():
    assert S.g_eps(CovarianceSpec.riesz(2, 1.0), HEAT2, 0.01) == pytest.approx(2 * math.pi ** 1.5 * 0.1, rel=1e-6)


def test_g_wave_riesz_closed_form():
    assert S.g_eps(CovarianceSpec.riesz(3, 1.0), WAVE3, 0.1) == pytest.approx(math.pi ** 2 * 0.01, rel=1e-6)


def test_g_heat_riesz_1d_closed_form():
    # int 2 s^{beta-1} e^{-r s^2} ds = Gamma(beta/2) r^{-beta/2}
    b, e = 0.5, 0.05
    exact = math.gamma(b / 2) * e ** (1 - b / 2) / (1 - b / 2)
    assert S.g_eps(CovarianceSpec.riesz(1, b), HEAT1, e) == pytest.approx(exact, rel=1e-6)


def test_g_wave_riesz_1d_mellin():
    # int_0^inf u^{mu-1}(u - sin u) du = -Gamma(mu) sin(pi mu / 2), mu = beta - 3
    b, e = 0.5, 0.1
    mu = b - 3
    exact = 2 * 0.25 * (2 * e) ** (3 - b) * (-special.gamma(mu) * math.sin(math.pi * mu / 2))
    assert S.g_eps(CovarianceSpec.riesz(1, b), WAVE1, e) == pytest.approx(exact, rel=1e-6)


@pytest.mark.parametrize("cov,green", [(CovarianceSpec.bessel(1, 0.5), HEAT1), (CovarianceSpec.bessel(3, 2.5), WAVE3),
                                       (CovarianceSpec.fractional((0.8, 0.8)), HEAT2),
                                       (CovarianceSpec.fractional((0.8, 0.8)), WAVE2)])
def test_g_against_double_quadrature(cov, green):
    """Brute-force r-then-s double integral."""
    e = 2 ** -5
    m = radial_weight(cov)
    if green.operator == "heat":
        inner = lambda s, r: math.exp(-r * s * s) * m(s)
    else:
        inner = lambda s, r: (math.sin(r * s) / s) ** 2 * m(s)
    cut = 400.0 / math.sqrt(e)

    def outer(r):
        a, _ = integrate.quad(inner, 0, cut, args=(r,), limit=800, epsrel=1e-10)
        return a
    # tail beyond the cut: heat is negligible; wave averages sin^2 to 1/2
    val, _ = integrate.quad(outer, 0, e, limit=200, epsrel=1e-9)
    if green.operator == "wave":
        tail, _ = integrate.quad(lambda s: 0.5 * m(s) / s ** 2, cut, np.inf)
        val += e * tail
    assert S.g_eps(cov, green, e) == pytest.approx(val, rel=2e-4)


@settings(max_examples=15, deadline=None)
@given(e1=st.floats(1e-4, 0.5), r=st.floats(1.01, 2.0),
       which=st.sampled_from([0, 1, 2, 3]))
def test_g_monotone(e1, r, which):
    cov, green = [(CovarianceSpec.riesz(1, 0.5), HEAT1), (CovarianceSpec.bessel(2, 1.5), HEAT2),
                  (CovarianceSpec.riesz(3, 1.0), WAVE3), (CovarianceSpec.fractional((0.8, 0.8)), WAVE2)][which]
    e2 = min(e1 * r, 1.0)
    assert 0 < S.g_eps(cov, green, e1) <= S.g_eps(cov, green, e2)


# -- closed-form exponents --------------------------------------------------

def test_expected_heat_riesz():
    t = S.expected_exponents(CovarianceSpec.riesz(2, 1.0), HEAT2, 0.2, 0.45)
    assert (t["eta"], t["eta1"], t["eta2"], t["eta3"]) == pytest.approx((0.5, 0.7, 1.0, 0.725))


def test_expected_wave_fractional():
    t = S.expected_exponents(CovarianceSpec.fractional((0.8, 0.9)), WAVE2)
    assert t["eta"] == pytest.approx(2.4)
    assert t["eta2"] == pytest.approx(2.6)


def test_expected_heat_bessel():
    t = S.expected_exponents(CovarianceSpec.bessel(2, 1.5), HEAT2, kappa2=0.2)
    assert t["eta"] == pytest.approx(0.75) and t["eta3"] == pytest.approx(0.85)


def test_expected_fractional_heat_1d():
    assert S.expected_exponents(CovarianceSpec.fractional((0.75,)), HEAT1)["eta"] == pytest.approx(0.75)


def test_expected_wave_riesz_eta3():
    t = S.expected_exponents(CovarianceSpec.riesz(3, 1.0), WAVE3, 0.45, 0.45)
    assert t["eta3"] == pytest.approx(2.45) and t["eta"] == pytest.approx(2.0) and t["eta2"] == 3.0


@st.composite
def _valid_case(draw):
    d = draw(st.integers(1, 3))
    fam = draw(st.sampled_from(["riesz", "bessel", "fractional"]))
    if fam == "riesz":
        cov = CovarianceSpec.riesz(d, draw(st.floats(0.01, min(2, d) - 0.01)))
    elif fam == "bessel":
        cov = CovarianceSpec.bessel(d, draw(st.floats(max(d - 2, 0) + 0.01, d - 0.01)))
    else:
        h = draw(st.lists(st.floats(0.51, 0.99), min_size=d, max_size=d).filter(lambda v: sum(v) > d - 0.99))
        cov = CovarianceSpec.fractional(tuple(h))
    green = GreenSpec(draw(st.sampled_from(["heat", "wave"])), d)
    f1, f2 = draw(st.floats(0.01, 0.99)), draw(st.floats(0.01, 0.99))
    return cov, green, f1, f2


@settings(max_examples=300, deadline=None)
@given(case=_valid_case())
def test_exponent_gaps_are_strict(case):
    cov, green, f1, f2 = case
    base = S.expected_exponents(cov, green)
    t = S.expected_exponents(cov, green, f1 * base["kappa1_max"], f2 * base["kappa2_max"])
    assert min(t["eta1"], t["eta2"], t["eta3"]) > t["eta"] > 0
    assert S.smallball_lambda(t, 2) > 0


def test_kappa_out_of_range():
    with pytest.raises(KappaOutOfRange):
        S.expected_exponents(CovarianceSpec.riesz(2, 1.0), HEAT2, 0.3, 0.2)
    with pytest.raises(KappaOutOfRange):
        S.expected_exponents(CovarianceSpec.riesz(2, 1.0), HEAT2, 0.1, 0.5)


def test_smallball_lambda_example():
    t = S.expected_exponents(CovarianceSpec.riesz(2, 1.0), HEAT2, 0.2, 0.45)
    assert S.smallball_lambda(t, 2) == pytest.approx(0.2)


# -- fits -------------------------------------------------------------------

def test_h3_fit_heat_riesz():
    rep = S.h3_fit(CovarianceSpec.riesz(2, 1.0), HEAT2)
    assert rep.passed and rep.fitted == pytest.approx(0.5, abs=0.02) and rep.stderr >= 0


def test_h3_fit_wave_riesz():
    rep = S.h3_fit(CovarianceSpec.riesz(3, 1.0), WAVE3)
    assert rep.passed and rep.fitted == pytest.approx(2.0, abs=0.02)


def test_h4_kind_i_heat_riesz():
    rep = S.h4_fit("i", CovarianceSpec.riesz(2, 1.0), HEAT2, 0.2, 0.45)
    assert rep.expected == pytest.approx(0.7) and rep.passed


def test_h4_kind_ii_heat_riesz():
    rep = S.h4_fit("ii", CovarianceSpec.riesz(2, 1.0), HEAT2, 0.2, 0.45, (1, 0))
    assert rep.expected == pytest.approx(1.0) and rep.passed


def test_h4_kind_iii_wave_riesz():
    rep = S.h4_fit("iii", CovarianceSpec.riesz(3, 1.0), WAVE3, 0.45, 0.45, (1, 0, 0))
    assert rep.expected == pytest.approx(2.45) and rep.passed


def test_h4_zero_shift():
    with pytest.raises(ZeroShift):
        S.h4_fit("ii", CovarianceSpec.riesz(2, 1.0), HEAT2, 0.2, 0.45, (0, 0))


def test_h4_kind_i_closed_form():
    # heat riesz d=1: int_0^eps r^k Gamma(b/2) r^{-b/2} dr
    b, k, e = 0.5, 0.2, 0.03
    exact = math.gamma(b / 2) * e ** (1 + k - b / 2) / (1 + k - b / 2)
    assert S.h4_kind_i(CovarianceSpec.riesz(1, b), HEAT1, e, k) == pytest.approx(exact, rel=1e-6)


def test_heat_shift_inner_direct():
    """Closed-form Gaussian-damped inner product versus 1-D quadrature in xi."""
    cov, r, w = CovarianceSpec.riesz(1, 0.5), 0.07, 0.8
    direct, _ = integrate.quad(lambda x: 2 * math.exp(-r * x * x) * math.cos(w * x) * x ** -0.5, 0, np.inf,
                               limit=400, epsrel=1e-11)
    assert S.heat_shift_inner(cov, r, [w]) == pytest.approx(direct, rel=1e-8)


def test_heat_monte_carlo_unstable():
    with pytest.raises(MonteCarloUnstable):
        S.heat_weighted_mc(CovarianceSpec.riesz(1, 0.5), [0.1, 0.01], 0.7, None, n_pairs=300)


def test_heat_monte_carlo_deterministic():
    cov = CovarianceSpec.riesz(2, 1.0)
    a = S.heat_weighted_mc(cov, [0.1, 0.05], 0.4, (1.0, 0.0), n_pairs=20_000)[0]
    b = S.heat_weighted_mc(cov, [0.1, 0.05], 0.4, (1.0, 0.0), n_pairs=20_000)[0]
    assert np.array_equal(a, b)


# -- localization -----------------------------------------------------------

def test_localization_ratio_decay_rate():
    cov = CovarianceSpec.riesz(2, 1.0)
    r = [S.localization_ratio(cov, HEAT2, (1, 0), m) for m in (9, 10)]
    assert r[1] / r[0] == pytest.approx(2 ** -0.5, rel=0.01)


def test_localization_ratio_vanishes():
    cov = CovarianceSpec.riesz(2, 1.0)
    assert S.localization_ratio(cov, HEAT2, (1, 0), 14) < 0.2 * S.localization_ratio(cov, HEAT2, (1, 0), 9)


def test_wave_shifted_integral_shell_theorem():
    # both spheres average |x - y + w|^{-1} to exactly 1/|w| (Newton), mass r each
    cov = CovarianceSpec.riesz(3, 1.0)
    for m in (4, 7):
        e = 2.0 ** -m
        exact = e ** 3 / 3 / spectral_constant(cov) / 2.0
        assert S.shifted_energy_integral(cov, WAVE3, e, (2.0, 0, 0)) == pytest.approx(exact, rel=1e-9)


def test_localization_ratio_requires_positive_m():
    with pytest.raises(ValueError):
        S.localization_ratio(CovarianceSpec.riesz(2, 1.0), HEAT2, (1, 0), 0)
