import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import fft

from homspde.kernels import CovarianceSpec
from homspde.noise import (GridSpec, NoiseIncrement, autocorrelation_check, check_periodization, colour,
                           covariance_function, isotropy_check, pairing_oracle, replica_generator,
                           sample_increment, sample_increments, smooth_box, spectral_weights,
                           stationarity_check, variance_check)

GRID2 = GridSpec(2, 16.0, 64, 0.01)


def test_grid_validation():
    for bad in (dict(points_per_dim=12), dict(points_per_dim=4), dict(length=0.0), dict(dt=-1.0), dict(dim=4)):
        kw = dict(dim=1, length=1.0, points_per_dim=16, dt=0.1)
        kw.update(bad)
        with pytest.raises(ValueError):
            GridSpec(**kw)
    g = GridSpec(2, 8.0, 32, 0.01)
    assert GridSpec.from_dict(g.to_dict()) == g
    assert g.spacing == 0.25 and g.cell_volume == 0.0625


def test_bessel_zero_mode_weight():
    w = spectral_weights(CovarianceSpec.bessel(1, 0.9), GridSpec(1, 2 * math.pi, 64, 0.01))
    assert w[0] == pytest.approx(1.0, rel=1e-14)


def test_riesz_weights_decay():
    grid = GridSpec(2, 2 * math.pi, 64, 0.01)
    w = spectral_weights(CovarianceSpec.riesz(2, 1.0), grid)
    # beta - d = -1: doubling |xi| halves the weight
    assert w[4, 0] / w[2, 0] == pytest.approx(0.5, rel=1e-12)
    assert w[3, 4] / w[6, 8] == pytest.approx(2.0, rel=1e-12)
    assert np.isfinite(w[0, 0]) and w[0, 0] > 0


@pytest.mark.parametrize("cov", [CovarianceSpec.riesz(2, 1.0), CovarianceSpec.bessel(2, 1.5),
                                 CovarianceSpec.fractional((0.8, 0.7))])
def test_weights_symmetric(cov):
    w = spectral_weights(cov, GridSpec(2, 10.0, 32, 0.01))
    flipped = w[np.ix_(-np.arange(32) % 32, -np.arange(32) % 32)]
    assert np.array_equal(w, flipped)
    assert np.all(w >= 0)


def test_covariance_function_matches_cosine_sum():
    grid = GridSpec(1, 8.0, 32, 0.01)
    w = spectral_weights(CovarianceSpec.riesz(1, 0.5), grid)
    xi = grid.frequencies()
    x = grid.coordinates()
    direct = np.array([np.sum(w * np.cos(xi * xk)) for xk in x])
    assert np.allclose(covariance_function(w), direct, rtol=1e-12, atol=1e-12)


def test_pairing_oracle_matches_spectral_route():
    grid = GridSpec(2, 8.0, 32, 0.01)
    w = spectral_weights(CovarianceSpec.bessel(2, 1.5), grid)
    h = smooth_box(grid, (3.0, 4.0), 1.0)
    g = smooth_box(grid, (5.0, 4.5), 0.7)
    dv = grid.cell_volume
    hh, gh = fft.fftn(h) * dv, fft.fftn(g) * dv
    spectral = float(np.real(np.sum(w * np.conj(hh) * gh)))
    assert pairing_oracle(h, g, grid, w) == pytest.approx(spectral, rel=1e-10)


def test_variance_and_whiteness():
    cov = CovarianceSpec.riesz(2, 1.0)
    v = variance_check(cov, GRID2, 10_000, seed=3)
    assert v["pass"] and v["relative_error"] < 0.05
    a = autocorrelation_check(cov, GRID2, 2000, 6, seed=4)
    assert a["pass"]


def test_stationarity_and_isotropy():
    cov = CovarianceSpec.bessel(2, 1.5)
    w = spectral_weights(cov, GRID2)
    fields = np.stack([sample_increment(cov, GRID2, replica_generator(5, i), w).values for i in range(1500)])
    assert stationarity_check(fields, GRID2, [[1, 0], [0, 2], [3, 1]])["pass"]
    assert isotropy_check(fields, GRID2, 2)["pass"]


def test_stationarity_detects_nonstationary_field():
    rng = np.random.default_rng(1)
    x = GRID2.coordinates()
    scale = 1 + 0.8 * np.sin(2 * math.pi * x / GRID2.length)[:, None] * np.ones(64)[None]
    fields = rng.standard_normal((1500, 64, 64))
    fields = scale * (fields + np.roll(fields, 1, axis=1))
    assert not stationarity_check(fields, GRID2, [[1, 0], [0, 1]], n_base=8)["pass"]


def test_reproducible_and_independent_streams():
    cov = CovarianceSpec.riesz(1, 0.5)
    grid = GridSpec(1, 8.0, 64, 0.01)
    a = sample_increment(cov, grid, replica_generator(9, 3)).values
    b = sample_increment(cov, grid, replica_generator(9, 3)).values
    c = sample_increment(cov, grid, replica_generator(9, 4)).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    incs = sample_increments(cov, grid, replica_generator(9, 3), 3)
    assert incs.shape == (3, 64) and np.array_equal(incs[0], a)


def test_increment_save_load_bit_exact(tmp_path):
    cov = CovarianceSpec.fractional((0.8, 0.7))
    grid = GridSpec(2, 8.0, 16, 0.01)
    inc = sample_increment(cov, grid, replica_generator(2, 0))
    inc.seed, inc.index = 2, 0
    inc.save(tmp_path / "w.f8")
    back = NoiseIncrement.load(tmp_path / "w.f8")
    assert back.grid == grid and back.seed == 2 and back.index == 0
    assert back.values.tobytes() == inc.values.tobytes()
    assert (tmp_path / "w.f8").stat().st_size == 16 * 16 * 8


def test_periodization_warning():
    with pytest.warns(UserWarning):
        assert not check_periodization(GridSpec(1, 8.0, 16, 0.1), 2.0)
    assert check_periodization(GridSpec(1, 32.0, 16, 0.1), 2.0)


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(0.05, 0.95), h=st.floats(0.55, 0.95), family=st.sampled_from(["riesz", "fractional"]))
def test_colouring_has_exact_covariance(beta, h, family):
    """Colouring unit impulses gives A with A A^T = dt f_L(x - y) exactly."""
    cov = CovarianceSpec.riesz(1, beta) if family == "riesz" else CovarianceSpec.fractional((h,))
    grid = GridSpec(1, 8.0, 16, 0.01)
    w = spectral_weights(cov, grid)
    a = colour(np.eye(16), grid, w)
    cf = covariance_function(w)
    lag = (np.arange(16)[:, None] - np.arange(16)[None, :]) % 16
    assert np.allclose(a @ a.T, grid.dt * cf[lag], rtol=1e-10, atol=1e-14)
