"""White-in-time, spatially homogeneous Gaussian noise on a periodic grid.

An increment over a time step ``dt`` is the stationary field

    w(x) = sum_k sqrt(dt * weights[k]) Z_k exp(i xi_k . x),

with complex Gaussians ``Z_k`` of Hermitian symmetry, generated by
transforming real white noise.  Its covariance is
``dt * sum_k weights[k] cos(xi_k . (x - y))``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft, stats

from .kernels import (CovarianceSpec, axis_cell_mass, cell_mass,
                      spectral_density_array, validate)


@dataclass(frozen=True)
class GridSpec:
    dim: int
    length: float
    points_per_dim: int
    dt: float

    def __post_init__(self):
        n = self.points_per_dim
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"points_per_dim must be a power of two >= 8, got {n}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 1 <= self.dim <= 3:
            raise ValueError("dim must be 1, 2 or 3")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    def coordinates(self) -> np.ndarray:
        """1-D coordinate array of grid nodes, 0, dx, ..., L - dx."""
        return np.arange(self.points_per_dim) * self.spacing

    def frequencies(self) -> np.ndarray:
        """1-D angular frequencies 2 pi k / L in FFT order."""
        return 2.0 * math.pi * fft.fftfreq(self.points_per_dim, d=self.spacing)

    def wavevectors(self) -> np.ndarray:
        """Array of shape ``shape + (dim,)`` holding xi_k."""
        f = self.frequencies()
        grids = np.meshgrid(*([f] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "length": self.length,
                "points_per_dim": self.points_per_dim, "dt": self.dt}

    @classmethod
    def from_dict(cls, obj: dict) -> "GridSpec":
        return cls(int(obj["dim"]), float(obj["length"]), int(obj["points_per_dim"]), float(obj["dt"]))


def replica_generator(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for replica ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def spectral_weights(cov: CovarianceSpec, grid: GridSpec) -> np.ndarray:
    """Mode weights ``mu(cell_k)`` in FFT layout, shape ``grid.shape``.

    Regular modes get ``density(xi_k) (2 pi / L)^d``.  Cells containing a
    singularity of the density get the exact cell mass instead.
    """
    validate(cov)
    if cov.dim != grid.dim:
        raise ValueError("kernel and grid dimensions differ")
    h = 2.0 * math.pi / grid.length
    half = 0.5 * h
    if cov.family == "fractional":
        f = grid.frequencies()
        out = np.ones(grid.shape)
        for j, hj in enumerate(cov.hurst):
            with np.errstate(divide="ignore"):
                axis = np.abs(f) ** (1.0 - 2.0 * hj) * h
            axis[0] = axis_cell_mass(hj, half)
            shape = [1] * grid.dim
            shape[j] = grid.points_per_dim
            out = out * axis.reshape(shape)
        return out
    with np.errstate(divide="ignore"):
        out = spectral_density_array(cov, grid.wavevectors()) * h ** grid.dim
    if cov.family == "riesz":
        out[(0,) * grid.dim] = cell_mass(cov, half)
    return out


def covariance_function(weights: np.ndarray) -> np.ndarray:
    """f_L on grid lags: sum_k weights[k] exp(i xi_k . x)."""
    return fft.ifftn(weights).real * weights.size


@dataclass
class NoiseIncrement:
    grid: GridSpec
    values: np.ndarray
    seed: int | None = None
    index: int | None = None

    def save(self, path: str | Path) -> None:
        """Write raw float64 values (row-major) and a JSON sidecar."""
        path = Path(path)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)
        meta = {"grid": self.grid.to_dict(), "seed": self.seed, "index": self.index,
                "shape": list(self.values.shape), "dtype": "float64", "order": "C"}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseIncrement":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        values = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
        return cls(GridSpec.from_dict(meta["grid"]), values, meta["seed"], meta["index"])


def _filter(grid: GridSpec, weights: np.ndarray) -> np.ndarray:
    """Half-spectrum amplitude sqrt(dt weights) N^(d/2) for rfftn layout."""
    amp = np.sqrt(grid.dt * weights) * grid.points_per_dim ** (grid.dim / 2)
    return amp[..., : grid.points_per_dim // 2 + 1]


def colour(white: np.ndarray, grid: GridSpec, weights: np.ndarray, workers: int | None = None) -> np.ndarray:
    """Map real white noise (last ``dim`` axes on the grid) to an increment."""
    axes = tuple(range(-grid.dim, 0))
    spec = fft.rfftn(white, axes=axes, workers=workers) * _filter(grid, weights)
    return fft.irfftn(spec, s=grid.shape, axes=axes, workers=workers)


def sample_increment(cov: CovarianceSpec, grid: GridSpec, rng: np.random.Generator,
                     weights: np.ndarray | None = None) -> NoiseIncrement:
    """One noise increment over a step of length ``grid.dt``."""
    if weights is None:
        weights = spectral_weights(cov, grid)
    white = rng.standard_normal(grid.shape)
    return NoiseIncrement(grid, colour(white, grid, weights))


def sample_increments(cov: CovarianceSpec, grid: GridSpec, rng: np.random.Generator, count: int,
                      weights: np.ndarray | None = None) -> np.ndarray:
    """``count`` independent increments stacked on axis 0."""
    if weights is None:
        weights = spectral_weights(cov, grid)
    white = rng.standard_normal((count,) + grid.shape)
    return colour(white, grid, weights)


def check_periodization(grid: GridSpec, max_separation: float) -> bool:
    """Warn when L < 8 x the largest separation used in an experiment."""
    ok = grid.length >= 8.0 * max_separation
    if not ok:
        warnings.warn(f"domain length {grid.length} is below 8 x separation {max_separation}",
                      stacklevel=2)
    return ok


# -- pairings and statistical checks ----------------------------------------

def pair(field: np.ndarray, h: np.ndarray, grid: GridSpec) -> np.ndarray:
    """W(h) = sum_x h(x) w(x) dx^d over the trailing grid axes."""
    axes = tuple(range(-grid.dim, 0))
    return np.sum(field * h, axis=axes) * grid.cell_volume


def pairing_oracle(h: np.ndarray, g: np.ndarray, grid: GridSpec, weights: np.ndarray) -> float:
    """Direct double sum sum_x sum_y h(x) f_L(x - y) g(y) dx^(2d)."""
    cf = covariance_function(weights)
    hx = h.ravel()
    gx = g.ravel()
    idx = np.indices(grid.shape).reshape(grid.dim, -1)
    n = grid.points_per_dim
    total = 0.0
    supp_h = np.nonzero(np.abs(hx) > 1e-14 * np.abs(hx).max())[0]
    supp_g = np.nonzero(np.abs(gx) > 1e-14 * np.abs(gx).max())[0]
    for i in supp_h:
        lag = tuple(((idx[:, i, None] - idx[:, supp_g]) % n))
        total += hx[i] * float(cf[lag] @ gx[supp_g])
    return total * grid.cell_volume ** 2


def smooth_box(grid: GridSpec, centre, half_width: float, edge: float | None = None) -> np.ndarray:
    """Product of smoothed indicators of |x_j - c_j| < half_width (periodic distance)."""
    edge = edge or 2.0 * grid.spacing
    x = grid.coordinates()
    out = np.ones(grid.shape)
    for j, cj in enumerate(np.atleast_1d(centre)):
        dist = (x - cj + 0.5 * grid.length) % grid.length - 0.5 * grid.length
        prof = 0.5 * (1.0 - np.tanh((np.abs(dist) - half_width) / edge))
        shape = [1] * grid.dim
        shape[j] = grid.points_per_dim
        out = out * prof.reshape(shape)
    return out


def bootstrap_mean(samples: np.ndarray, rng: np.random.Generator, n_boot: int = 400) -> tuple[float, float]:
    """Sample mean and bootstrap standard error."""
    samples = np.asarray(samples, dtype=float)
    idx = rng.integers(0, len(samples), size=(n_boot, len(samples)))
    return float(samples.mean()), float(samples[idx].mean(axis=1).std(ddof=1))


def pairing_check(cov: CovarianceSpec, grid: GridSpec, pairs, replicas: int, seed: int,
                  n_sigma: float = 3.0) -> list[dict]:
    """Compare empirical E[W(h) W(g)] / dt with the double-sum oracle."""
    weights = spectral_weights(cov, grid)
    hs = np.stack([p[0] for p in pairs])
    gs = np.stack([p[1] for p in pairs])
    prods = np.empty((replicas, len(pairs)))
    batch = 256
    for start in range(0, replicas, batch):
        stop = min(start + batch, replicas)
        fields = np.stack([sample_increment(cov, grid, replica_generator(seed, i), weights).values
                           for i in range(start, stop)])
        wh = pair(fields[:, None], hs[None], grid)
        wg = pair(fields[:, None], gs[None], grid)
        prods[start:stop] = wh * wg / grid.dt
    boot_rng = replica_generator(seed, 2 ** 31)
    out = []
    for k, (h, g) in enumerate(pairs):
        oracle = pairing_oracle(h, g, grid, weights)
        mean, se = bootstrap_mean(prods[:, k], boot_rng)
        out.append({"oracle": oracle, "empirical": mean, "stderr": se,
                    "pass": bool(abs(mean - oracle) <= n_sigma * se)})
    return out


def autocorrelation_check(cov: CovarianceSpec, grid: GridSpec, replicas: int, steps: int,
                          seed: int, max_lag: int = 3) -> dict:
    """Empirical correlation across steps at a fixed site; bound 4 / sqrt(replicas)."""
    weights = spectral_weights(cov, grid)
    site = (0,) * grid.dim
    series = np.empty((replicas, steps))
    for i in range(replicas):
        incs = sample_increments(cov, grid, replica_generator(seed, i), steps, weights)
        series[i] = incs[(slice(None),) + site]
    z = (series - series.mean(axis=0)) / series.std(axis=0)
    lags = {}
    for lag in range(1, max_lag + 1):
        lags[lag] = float(np.mean(z[:, :-lag] * z[:, lag:]))
    bound = 4.0 / math.sqrt(replicas)
    return {"lags": lags, "bound": bound, "pass": bool(max(abs(v) for v in lags.values()) < bound)}


def variance_check(cov: CovarianceSpec, grid: GridSpec, replicas: int, seed: int) -> dict:
    """Pointwise variance against dt * sum(weights)."""
    weights = spectral_weights(cov, grid)
    rng = replica_generator(seed, 0)
    vals = sample_increments(cov, grid, rng, replicas, weights)[(slice(None),) + (0,) * grid.dim]
    expected = grid.dt * float(weights.sum())
    emp = float(np.mean(vals ** 2))
    rel = abs(emp / expected - 1.0)
    return {"empirical": emp, "expected": expected, "relative_error": rel, "pass": bool(rel < 0.05)}


def stationarity_check(fields: np.ndarray, grid: GridSpec, displacements, n_base: int = 6,
                       level: float = 0.01, seed: int = 0) -> dict:
    """Test that E[w(x) w(x + delta)] does not depend on x.

    For each displacement the products at ``n_base`` base points form a
    vector per replica; a Hotelling-type chi-square statistic on the
    contrasts of their means is compared with chi2(n_base - 1).  Classes are
    combined by Bonferroni at the overall ``level``.
    """
    rng = np.random.default_rng(seed)
    n = grid.points_per_dim
    results = []
    for delta in displacements:
        delta = np.atleast_1d(delta).astype(int)
        # distinct base points, or the contrast covariance is singular
        flat = rng.choice(n ** grid.dim, size=n_base, replace=False)
        base = np.stack(np.unravel_index(flat, grid.shape), axis=1)
        prods = []
        for b in base:
            i0 = tuple(b)
            i1 = tuple((b + delta) % n)
            prods.append(fields[(slice(None),) + i0] * fields[(slice(None),) + i1])
        y = np.stack(prods, axis=1)
        contrasts = y[:, 1:] - y[:, :1]
        mu = contrasts.mean(axis=0)
        s = np.cov(contrasts, rowvar=False).reshape(n_base - 1, n_base - 1) / len(y)
        stat = float(mu @ np.linalg.solve(s, mu))
        p = float(stats.chi2.sf(stat, n_base - 1))
        results.append({"displacement": delta.tolist(), "chi2": stat, "p_value": p})
    floor = level / max(len(results), 1)
    return {"classes": results, "pass": bool(all(r["p_value"] >= floor for r in results))}


def isotropy_check(fields: np.ndarray, grid: GridSpec, modulus: int, n_sigma: float = 4.0) -> dict:
    """Compare covariance along the first two axes at equal lag."""
    if grid.dim < 2:
        return {"pass": True, "difference": 0.0, "stderr": 0.0}
    a = fields * np.roll(fields, -modulus, axis=1)
    b = fields * np.roll(fields, -modulus, axis=2)
    diff = (a - b).reshape(len(fields), -1).mean(axis=1)
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    return {"difference": float(diff.mean()), "stderr": float(se),
            "pass": bool(abs(diff.mean()) <= n_sigma * se)}
