"""Fundamental solutions of the heat and wave operators.

The heat kernel is the Gaussian density with variance ``t`` per coordinate,
so that ``F Gamma(t)(xi) = exp(-t |xi|^2 / 2)``.  The wave kernel in
dimension 1, 2, 3 is the measure whose Fourier transform is
``sin(t |xi|) / |xi|``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ParameterError

OPERATORS = ("heat", "wave")


@dataclass(frozen=True)
class GreenSpec:
    operator: str
    dim: int

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ParameterError(f"operator must be one of {OPERATORS}, got {self.operator!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ParameterError(f"dim must be a positive integer, got {self.dim!r}")
        if self.dim > 3:
            raise ParameterError(f"{self.operator}: dim <= 3 supported, got {self.dim}")

    def to_dict(self) -> dict:
        return {"operator": self.operator, "dim": int(self.dim)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "GreenSpec":
        try:
            return cls(obj["operator"], obj["dim"])
        except KeyError as exc:
            raise ParameterError(f"green spec missing field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "GreenSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class WeightedPointCloud:
    """Discrete measure ``sum_k weights[k] delta(points[k])``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights must have equal length")

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return len(self.weights)

    def characteristic(self, xi: np.ndarray) -> np.ndarray:
        """sum_k w_k exp(-i xi . x_k) for each row of ``xi``."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.exp(-1j * xi @ self.points.T) @ self.weights


def _check_t(t: float) -> float:
    t = float(t)
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    return t


def ft_green(spec: GreenSpec, t: float, xi) -> float | np.ndarray:
    """Fourier transform of Gamma(t) at ``xi`` (a point, or rows of points)."""
    t = _check_t(t)
    xi = np.asarray(xi, dtype=float)
    s = np.sqrt(np.sum(xi * xi, axis=-1)) if xi.ndim else np.abs(xi)
    return ft_green_radial(spec, t, s)


def ft_green_radial(spec: GreenSpec, t: float, s):
    """FGamma(t) as a function of |xi|."""
    s = np.asarray(s, dtype=float)
    if spec.operator == "heat":
        out = np.exp(-0.5 * t * s * s)
    else:
        # t * sinc(t s / pi) is sin(t s)/s with the removable point at 0
        out = t * np.sinc(t * s / math.pi)
    return float(out) if out.ndim == 0 else out


def total_mass(spec: GreenSpec, t: float) -> float:
    """Gamma(t, R^d)."""
    t = _check_t(t)
    return 1.0 if spec.operator == "heat" else t


def sample_measure(spec: GreenSpec, t: float, n: int, rng: np.random.Generator) -> WeightedPointCloud:
    """Draw ``n`` equally weighted points distributed as Gamma(t) / Gamma(t, R^d)."""
    t = _check_t(t)
    if n < 1:
        raise ValueError("n must be at least 1")
    d = spec.dim
    if spec.operator == "heat":
        pts = rng.standard_normal((n, d)) * math.sqrt(t)
    elif d == 1:
        pts = rng.uniform(-t, t, size=(n, 1))
    elif d == 2:
        # radius density r / (t sqrt(t^2 - r^2)), CDF 1 - sqrt(1 - r^2/t^2)
        r = t * np.sqrt(1.0 - rng.random(n) ** 2)
        phi = 2.0 * math.pi * rng.random(n)
        pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    else:
        g = rng.standard_normal((n, 3))
        pts = t * g / np.linalg.norm(g, axis=1, keepdims=True)
    return WeightedPointCloud(pts, np.full(n, total_mass(spec, t) / n))


def quadrature_measure(spec: GreenSpec, t: float, order: int = 16, power: float = 0.0) -> WeightedPointCloud:
    """Deterministic point cloud for the measure ``|x|^power Gamma(t, dx)``.

    ``order`` controls the number of nodes per coordinate.  With
    ``power = 0`` the weights sum to Gamma(t, R^d) up to rounding.
    """
    t = _check_t(t)
    d = spec.dim
    if power < 0:
        raise ValueError("power must be nonnegative")
    if spec.operator == "heat":
        return _heat_cloud(d, t, order, power)
    if d == 1:
        # |x|^power * 1/2 on (-t, t): Gauss-Jacobi on (0, t), mirrored
        x, w = special.roots_jacobi(order, 0.0, power)
        u = 0.5 * (x + 1.0)
        w = w * 0.5 ** (power + 1.0) * t ** (power + 1.0)
        pts = np.concatenate([t * u, -t * u])[:, None]
        wts = 0.5 * np.concatenate([w, w])
        return WeightedPointCloud(pts, wts)
    if d == 2:
        # rho = t sin(theta) turns rho drho / sqrt(t^2 - rho^2) into t sin(theta) dtheta
        x, w = special.roots_legendre(order)
        theta = 0.25 * math.pi * (x + 1.0)
        w_theta = 0.25 * math.pi * w * t * np.sin(theta) * (t * np.sin(theta)) ** power
        nphi = 2 * order
        phi = 2.0 * math.pi * (np.arange(nphi) + 0.5) / nphi
        rho = t * np.sin(theta)
        pts = np.stack([np.outer(rho, np.cos(phi)), np.outer(rho, np.sin(phi))], axis=-1).reshape(-1, 2)
        wts = np.repeat(w_theta / nphi, nphi)
        return WeightedPointCloud(pts, wts)
    # d = 3: sphere of radius t, product rule in cos(theta) and phi
    x, w = special.roots_legendre(order)
    nphi = 2 * order
    phi = 2.0 * math.pi * (np.arange(nphi) + 0.5) / nphi
    sin_theta = np.sqrt(1.0 - x * x)
    pts = t * np.stack([np.outer(sin_theta, np.cos(phi)),
                        np.outer(sin_theta, np.sin(phi)),
                        np.outer(x, np.ones(nphi))], axis=-1).reshape(-1, 3)
    wts = np.repeat(w / (2.0 * nphi), nphi) * t ** (1.0 + power)
    return WeightedPointCloud(pts, wts)


def _heat_cloud(d: int, t: float, order: int, power: float) -> WeightedPointCloud:
    x, w = special.roots_hermitenorm(order)
    w = w / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = math.sqrt(t) * np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(pts.shape[0])
    for wj in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * wj.ravel()
    if power:
        wts = wts * np.linalg.norm(pts, axis=1) ** power
    return WeightedPointCloud(pts, wts)


def h1_check(spec: GreenSpec, cov, T: float) -> dict:
    """Evaluate int_0^T ||Gamma(t)||_H^2 dt and sup_{t <= T} Gamma(t, R^d).

    Raises :class:`~homspde.errors.QuadratureDivergence` when the radial
    integral does not settle under dyadic refinement.
    """
    from .scaling import g_eps

    value = g_eps(cov, spec, T, _allow_large=True)
    mass = 1.0 if spec.operator == "heat" else float(T)
    return {"finite": bool(np.isfinite(value)), "value": float(value), "mass_bound": mass}
