import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homspde.density import gaussian_oracle
from homspde.errors import TimeNotSaved
from homspde.green import GreenSpec, ft_green
from homspde.kernels import CovarianceSpec
from homspde.malliavin import (bump_derivative, decomposition_csv, decomposition_table, decomposition_terms,
                               derivative_field, derivative_forward, dominance_threshold, gram_matrix, hat,
                               malliavin_ensemble, malliavin_matrix, pair_with_directions, smallball_csv,
                               smallball_probe)
from homspde.noise import GridSpec, spectral_weights
from homspde.scaling import expected_exponents, smallball_lambda
from homspde.solver import Coefficients, Preset, simulate_path

HEAT1, WAVE1 = GreenSpec("heat", 1), GreenSpec("wave", 1)
RIESZ1 = CovarianceSpec.riesz(1, 0.5)
SMALL = GridSpec(1, 8.0, 32, 2 ** -6)


def _path(green, coeffs, grid=SMALL, T=0.25, seed=3, replica=0, cov=RIESZ1):
    return simulate_path(cov, green, coeffs, grid, T, seed, replica)


# -- derivative field -------------------------------------------------------

@pytest.mark.parametrize("green", [HEAT1, WAVE1])
def test_linear_derivative_is_the_green_function(green):
    grid = GridSpec(1, 8.0, 64, 2 ** -6)
    traj = _path(green, Coefficients.constant(1.0), grid)
    x_i = 10
    du = derivative_field(traj, None, [(x_i,)])
    xi = grid.wavevectors()[:, 0]
    phase = np.exp(-1j * xi * x_i * grid.spacing)
    for k, n in enumerate(du.steps):
        lag = traj.steps * grid.dt - n * grid.dt
        exact = ft_green(green, lag, xi[:, None])
        assert np.max(np.abs(hat(grid, du.values[k, 0]) - phase * exact)) < 1e-10


def test_zero_sigma_gives_zero_derivative():
    traj = _path(HEAT1, Coefficients(Preset("zero")))
    du = derivative_field(traj, None, [(3,), (9,)])
    assert np.all(du.values == 0.0)


@pytest.mark.parametrize("green", [HEAT1, WAVE1])
def test_adjoint_sweep_matches_forward_tangent(green):
    coeffs = Coefficients(Preset("sine", {"a": 1.0, "b": 0.5}), Preset("cosine", {"a": 0.0, "b": 0.3}))
    traj = _path(green, coeffs)
    r = 5 * SMALL.dt
    adj = derivative_field(traj, [r], [(7,)]).values[0, 0]
    fwd = derivative_forward(traj, r, (7,))
    assert np.allclose(adj, fwd, rtol=1e-11, atol=1e-12 * np.max(np.abs(fwd)))


@pytest.mark.parametrize("green", [HEAT1, WAVE1])
def test_bump_oracle_agrees_with_derivative(green):
    traj = _path(green, Coefficients.bounded_away())
    rng = np.random.default_rng(0)
    x = SMALL.coordinates()
    # a smooth direction in space, random in time
    directions = rng.standard_normal((traj.steps, 1)) * np.exp(-np.cos(2 * math.pi * x / SMALL.length))[None]
    weights = spectral_weights(RIESZ1, SMALL)
    du = derivative_field(traj, None, [(0,), (12,)])
    pred = pair_with_directions(du, weights, directions)
    diff = bump_derivative(traj, directions, bump=1e-5)
    assert np.allclose(diff[[0, 12]], pred, rtol=1e-7, atol=1e-9)


def test_derivative_time_must_be_saved():
    traj = _path(HEAT1, Coefficients.constant())
    with pytest.raises(TimeNotSaved):
        derivative_field(traj, [0.3 * SMALL.dt])
    with pytest.raises(TimeNotSaved):
        derivative_field(traj, [0.25])


def test_repeated_points_rejected():
    traj = _path(HEAT1, Coefficients.constant())
    with pytest.raises(ValueError):
        malliavin_matrix(traj, [(3,), (3,)])
    with pytest.raises(ValueError):
        malliavin_matrix(traj, [(3,), (35,)])


# -- Gram matrix ------------------------------------------------------------

@pytest.mark.parametrize("green", [HEAT1, WAVE1])
def test_linear_gram_equals_scheme_covariance(green):
    grid = GridSpec(1, 8.0, 64, 2 ** -6)
    c = 1.7
    traj = _path(green, Coefficients.constant(c), grid)
    pts = [(4,), (9,), (30,)]
    m = malliavin_matrix(traj, pts)
    ref = gaussian_oracle(RIESZ1, green, 0.25, [[p[0] * grid.spacing] for p in pts], c=c,
                          variant="scheme", grid=grid).cov
    assert np.allclose(m.entries, ref, rtol=1e-10, atol=1e-12 * ref[0, 0])


def test_linear_gram_close_to_continuum_variance():
    grid = GridSpec(1, 32.0, 1024, 2 ** -10)
    traj = _path(HEAT1, Coefficients.constant(), grid, T=0.5)
    m = malliavin_matrix(traj, [(0,)])
    ref = gaussian_oracle(RIESZ1, HEAT1, 0.5, [[0.0]]).cov[0, 0]
    # left-point rule in time plus grid truncation of the highest modes
    assert m.entries[0, 0] == pytest.approx(ref, rel=0.02)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(0.6, 1.5), b=st.floats(-1.0, 1.0),
       pts=st.lists(st.integers(0, 31), min_size=1, max_size=4, unique=True),
       operator=st.sampled_from(["heat", "wave"]))
def test_gram_is_symmetric_psd(seed, a, b, pts, operator):
    coeffs = Coefficients(Preset("sine", {"a": a, "b": b}))
    traj = _path(GreenSpec(operator, 1), coeffs, seed=seed)
    m = malliavin_matrix(traj, [(p,) for p in pts])
    assert m.is_symmetric() and m.is_psd()


def test_single_point_gram_positive_with_floor():
    traj = _path(WAVE1, Coefficients.bounded_away(), seed=12)
    m = malliavin_matrix(traj, [(5,)])
    assert m.entries[0, 0] > 0


def test_trapezoid_rule_on_user_times():
    traj = _path(HEAT1, Coefficients.constant())
    weights = spectral_weights(RIESZ1, SMALL)
    r = np.arange(0, traj.steps, 3) * SMALL.dt
    du = derivative_field(traj, r, [(2,)])
    norms = [np.sum(weights * np.abs(hat(SMALL, f[0])) ** 2) for f in du.values]
    got = gram_matrix(du, RIESZ1, weights).entries[0, 0]
    assert got == pytest.approx(np.trapezoid(norms, r), rel=1e-12)


# -- decomposition ----------------------------------------------------------

DEC_GRID = GridSpec(1, 8.0, 256, 2 ** -10)
EPS = [2.0 ** -k for k in range(3, 10)]


@pytest.fixture(scope="module")
def nonlinear_table():
    coeffs = Coefficients.bounded_away()
    traj = simulate_path(RIESZ1, HEAT1, coeffs, DEC_GRID, 0.25, 5, 0)
    return traj, decomposition_table(traj, RIESZ1, [(64,), (160,)], (0.6, 0.8), EPS)


def test_a11_lower_bound(nonlinear_table):
    traj, table = nonlinear_table
    floor = traj.coeffs.sigma_floor
    for row in table:
        g = gaussian_oracle(RIESZ1, HEAT1, row.eps, [[0.0]], variant="scheme", grid=DEC_GRID).cov[0, 0]
        assert row.a11 >= floor ** 2 * g * (1 - 1e-12)


def test_decomposition_identity(nonlinear_table):
    """A1 + A2 + 2 cross equals the windowed quadratic form of the Gram matrix."""
    traj, table = nonlinear_table
    weights = spectral_weights(RIESZ1, DEC_GRID)
    du = derivative_field(traj, None, [(64,), (160,)])
    lam = np.tensordot(np.array([0.6, 0.8]), du.values, axes=([0], [1]))
    norms = np.array([np.sum(weights * np.abs(hat(DEC_GRID, f)) ** 2) for f in lam])
    for row in table:
        k = int(round(row.eps / DEC_GRID.dt))
        assert row.quadratic == pytest.approx(DEC_GRID.dt * norms[-k:].sum(), rel=1e-10)
        assert row.a1 == pytest.approx(row.a11 + row.a12 + row.a13, rel=1e-12)


def test_dominance_threshold_exists(nonlinear_table):
    _, table = nonlinear_table
    eps_star = dominance_threshold(table)
    assert eps_star is not None and eps_star in EPS


def test_decomposition_terms_single_window(nonlinear_table):
    traj, table = nonlinear_table
    one = decomposition_terms(traj, RIESZ1, HEAT1, traj.coeffs, [(64,), (160,)], (0.6, 0.8), EPS[2])
    assert one.a11 == pytest.approx(table[2].a11, rel=1e-12)
    with pytest.raises(ValueError):
        decomposition_table(traj, RIESZ1, [(64,), (160,)], (1.0, 1.0), EPS)


def test_decomposition_csv(nonlinear_table):
    _, table = nonlinear_table
    lines = decomposition_csv(table).splitlines()
    assert lines[0] == "eps,a11,a12,a13,a2" and len(lines) == len(EPS) + 1


# -- small-ball probe -------------------------------------------------------

def test_smallball_lambda_example():
    exps = expected_exponents(CovarianceSpec.riesz(2, 1.0), GreenSpec("heat", 2), 0.2, 0.45)
    assert smallball_lambda(exps, 2) == pytest.approx(0.2, rel=1e-12)


def test_smallball_needs_enough_matrices():
    grid = GridSpec(1, 8.0, 16, 2 ** -4)
    mats = malliavin_ensemble(RIESZ1, HEAT1, Coefficients.constant(), grid, 0.25, 1, 10, [(1,)])
    with pytest.raises(ValueError):
        smallball_probe(mats, [1.0, 0.5])


def test_smallball_linear_case_is_deterministic():
    grid = GridSpec(1, 8.0, 16, 2 ** -4)
    mats = malliavin_ensemble(RIESZ1, HEAT1, Coefficients.constant(), grid, 0.25, 1, 500, [(1,), (9,)])
    det = mats[0].det
    assert det > 0
    probe = smallball_probe(mats, [4 * det, 0.999 * det, 0.5 * det], RIESZ1, HEAT1)
    assert probe["tail"] == [1.0, 0.0, 0.0]
    assert probe["lambda"] > 0
    assert smallball_csv(probe).splitlines()[0] == "delta,tail,lambda"


def test_smallball_single_point_above_floor_bound():
    grid = GridSpec(1, 8.0, 32, 2 ** -5)
    coeffs = Coefficients.bounded_away()
    mats = malliavin_ensemble(RIESZ1, HEAT1, coeffs, grid, 0.25, 2, 500, [(4,)])
    g = gaussian_oracle(RIESZ1, HEAT1, 0.25, [[0.0]], variant="scheme", grid=grid).cov[0, 0]
    bound = 0.5 * coeffs.sigma_floor ** 2 * g
    probe = smallball_probe(mats, [bound * 4, bound * 2, bound])
    assert probe["tail"][-1] == 0.0
    with pytest.raises(ValueError):
        smallball_probe(mats, [bound, bound * 2])
