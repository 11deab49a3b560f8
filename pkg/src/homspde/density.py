"""Joint density of u(t, x_1..x_n): Gaussian oracle, product KDE, positivity."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InsufficientReplicas, SingularCovariance
from .green import GreenSpec
from .kernels import CovarianceSpec
from .noise import GridSpec, spectral_weights
from .scaling import g_eps, h4_kind_ii, wave_pair_integral

MAX_COND = 1e12
MIN_REPLICAS = 500


# -- Gaussian oracle --------------------------------------------------------

@dataclass
class GaussianDensity:
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        self._mvn = stats.multivariate_normal(np.zeros(len(self.cov)), self.cov)

    @property
    def dim(self) -> int:
        return len(self.cov)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def peak(self) -> float:
        return float((2 * math.pi) ** (-self.dim / 2) / math.sqrt(np.linalg.det(self.cov)))

    def query(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.atleast_1d(self._mvn.pdf(y))


def _time_factor_grid(green: GreenSpec, t: float, s: np.ndarray) -> np.ndarray:
    """int_0^t |FGamma(r)(s)|^2 dr per mode."""
    if green.operator == "heat":
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -np.expm1(-t * s * s) / (s * s)
        return np.where(s == 0, t, out)
    x = t * s
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (2 * x - np.sin(2 * x)) / (4 * s ** 3)
    small = x < 1e-2
    series = t ** 3 * (1 / 3 - 2 * x ** 2 / 15 + 2 * x ** 4 / 315)
    return np.where(small, series, out)


def _time_factor_scheme(green: GreenSpec, grid: GridSpec, t: float, s: np.ndarray) -> np.ndarray:
    """dt sum_{j=1}^{M} |FGamma_disc(j dt)(s)|^2: the scheme's exact linear variance per mode."""
    dt = grid.dt
    M = int(round(t / dt))
    acc = np.zeros_like(s)
    for j in range(1, M + 1):
        if green.operator == "heat":
            acc += np.exp(-j * dt * s * s)
        else:
            acc += (j * dt * np.sinc(j * dt * s / math.pi)) ** 2
    return dt * acc


def gaussian_oracle(cov: CovarianceSpec, green: GreenSpec, t: float, points, c: float = 1.0,
                    variant: str = "continuum", grid: GridSpec | None = None) -> GaussianDensity:
    """Law of (u(t, x_1), ..., u(t, x_n)) when sigma = c and b = 0.

    ``variant``:
      * ``continuum``: whole-space quadrature of the covariance;
      * ``grid``: the same time integral summed over the grid's spectral weights;
      * ``scheme``: the exact covariance of the discrete time stepping.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != cov.dim:
        pts = pts.reshape(-1, cov.dim)
    n = len(pts)
    sig = np.zeros((n, n))
    if variant == "continuum":
        diag = g_eps(cov, green, t, _allow_large=True)
        for i in range(n):
            sig[i, i] = diag
            for j in range(i + 1, n):
                w = pts[i] - pts[j]
                if green.operator == "heat":
                    v = h4_kind_ii(cov, green, t, w)
                else:
                    if 2 * t >= np.linalg.norm(w):
                        warnings.warn("wave supports overlap; point-cloud quadrature is approximate",
                                      stacklevel=2)
                    v = float(wave_pair_integral(cov, green, [t], w)[0])
                sig[i, j] = sig[j, i] = v
    elif variant in ("grid", "scheme"):
        if grid is None:
            raise ValueError(f"variant {variant!r} needs a grid")
        weights = spectral_weights(cov, grid)
        xi = grid.wavevectors()
        s = np.linalg.norm(xi, axis=-1)
        tf = _time_factor_grid(green, t, s) if variant == "grid" else _time_factor_scheme(green, grid, t, s)
        base = weights * tf
        for i in range(n):
            for j in range(i, n):
                phase = np.cos(xi @ (pts[i] - pts[j]))
                sig[i, j] = sig[j, i] = float(np.sum(base * phase))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    sig *= c * c
    cond = np.linalg.cond(sig) if n > 1 else (1.0 if sig[0, 0] > 0 else np.inf)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularCovariance(f"covariance condition number {cond:.3g} exceeds {MAX_COND:g}")
    return GaussianDensity(sig)


# -- kernel density estimate ------------------------------------------------

@dataclass
class DensityEstimate:
    points: list
    samples: np.ndarray
    bandwidth: np.ndarray

    @property
    def sample_count(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def query(self, y, chunk: int = 512) -> np.ndarray:
        """Product-Gaussian KDE at rows of ``y``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        h = self.bandwidth
        norm = 1.0 / (len(self.samples) * np.prod(h) * (2 * math.pi) ** (self.dim / 2))
        out = np.empty(len(y))
        for a in range(0, len(y), chunk):
            z = (y[a:a + chunk, None, :] - self.samples[None, :, :]) / h
            out[a:a + chunk] = np.exp(-0.5 * np.sum(z * z, axis=-1)).sum(axis=1) * norm
        return out

    def with_bandwidth(self, bandwidth) -> "DensityEstimate":
        return DensityEstimate(self.points, self.samples, np.asarray(bandwidth, dtype=float))


def scott_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-coordinate sd times R^(-1/(n+4)); atoms get a 1e-12 floor."""
    R, n = samples.shape
    sd = samples.std(axis=0, ddof=1)
    return np.maximum(sd * R ** (-1.0 / (n + 4)), 1e-12)


def extract_points(ensemble, points) -> np.ndarray:
    """(replicas, n) array of u(t, x_i)."""
    from .malliavin import _as_indices
    idx = _as_indices(ensemble.grid, points)
    return np.stack([ensemble.replicas[(slice(None),) + i] for i in idx], axis=1)


def kde_joint(ensemble, points, bandwidth=None) -> DensityEstimate:
    """Gaussian-product KDE of the point values across replicas."""
    if len(ensemble) < MIN_REPLICAS:
        raise InsufficientReplicas(f"need at least {MIN_REPLICAS} replicas, got {len(ensemble)}")
    samples = extract_points(ensemble, points)
    h = scott_bandwidth(samples) if bandwidth is None else np.broadcast_to(
        np.asarray(bandwidth, dtype=float), (samples.shape[1],)).copy()
    return DensityEstimate(list(points), samples, h)


def lattice(lo, hi, count: int) -> np.ndarray:
    axes = [np.linspace(a, b, count) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def oracle_distance(est: DensityEstimate, oracle: GaussianDensity, box_sigma: float = 3.0,
                    count: int = 41) -> dict:
    """sup |kde - oracle| on the box [-k sd, k sd]^n, absolute and relative to the oracle peak."""
    half = box_sigma * oracle.std
    y = lattice(-half, half, count)
    diff = np.abs(est.query(y) - oracle.query(y))
    sup = float(diff.max())
    return {"sup_abs": sup, "peak": oracle.peak, "relative": sup / oracle.peak,
            "box_sigma": box_sigma, "lattice": count}


def box_integral(est: DensityEstimate, half_width_sigma: float = 5.0, log2_points: int = 14,
                 seed: int = 0) -> float:
    """Scrambled Sobol estimate of the KDE mass on the sample-sd box."""
    from scipy.stats import qmc
    sd = est.samples.std(axis=0, ddof=1)
    mu = est.samples.mean(axis=0)
    lo, hi = mu - half_width_sigma * sd, mu + half_width_sigma * sd
    u = qmc.Sobol(d=est.dim, scramble=True, seed=seed).random_base2(log2_points)
    y = qmc.scale(u, lo, hi)
    return float(est.query(y).mean() * np.prod(hi - lo))


def positivity_report(est: DensityEstimate, quantile_box: float = 0.1, count: int = 21) -> dict:
    """Minimum of the KDE on the central quantile box and its bandwidth-halving stability."""
    q = float(quantile_box)
    if not 0 < q < 0.5:
        raise ValueError("quantile_box must lie in (0, 1/2)")
    lo = np.quantile(est.samples, q, axis=0)
    hi = np.quantile(est.samples, 1 - q, axis=0)
    degenerate = bool(np.any(hi - lo <= 1e-9 * np.maximum(1.0, np.abs(hi))))
    y = lattice(lo, hi, count)
    vals = est.query(y)
    half = est.with_bandwidth(0.5 * est.bandwidth).query(y)
    m, mh = float(vals.min()), float(half.min())
    stable = bool(m > 0 and 0.5 <= mh / m <= 2.0)
    return {"min_density": m, "min_density_half_bandwidth": mh,
            "box": {"lo": lo.tolist(), "hi": hi.tolist()}, "degenerate": degenerate,
            "pass": bool(not degenerate and m > 0 and stable)}


def lattice_csv(est: DensityEstimate, lo, hi, count: int = 41) -> str:
    """Coordinates and KDE value on a regular lattice."""
    y = lattice(lo, hi, count)
    vals = est.query(y)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"y{i + 1}" for i in range(y.shape[1])] + ["density"])
    for row, v in zip(y, vals):
        w.writerow([f"{c:.10g}" for c in row] + [f"{v:.10e}"])
    return buf.getvalue()
