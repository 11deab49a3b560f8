"""Spatially homogeneous covariance kernels and their spectral densities.

Three families are supported:

* ``riesz``       f(x) = |x|^(-beta),                      0 < beta < min(2, d)
* ``bessel``      f(x) = int_0^inf u^((alpha-d-2)/2) e^(-u) e^(-|x|^2/4u) du,
                  max(d-2, 0) < alpha < d
* ``fractional``  f(x) = prod_j |x_j|^(2H_j - 2),           1/2 < H_j < 1,
                  sum_j H_j > d - 1

Spectral densities are returned with unit normalization; the constant that
links them to ``kernel_value`` through ``int f phi = int F(phi) dmu`` is
available from :func:`spectral_constant`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import ParameterError, SingularPoint

FAMILIES = ("riesz", "bessel", "fractional")
MAX_DIM = 3


@dataclass(frozen=True)
class CovarianceSpec:
    family: str
    dim: int
    beta: float | None = None
    alpha: float | None = None
    hurst: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.hurst is not None and not isinstance(self.hurst, tuple):
            object.__setattr__(self, "hurst", tuple(float(h) for h in self.hurst))

    @classmethod
    def riesz(cls, dim: int, beta: float) -> "CovarianceSpec":
        return cls("riesz", dim, beta=float(beta))

    @classmethod
    def bessel(cls, dim: int, alpha: float) -> "CovarianceSpec":
        return cls("bessel", dim, alpha=float(alpha))

    @classmethod
    def fractional(cls, hurst) -> "CovarianceSpec":
        hurst = tuple(float(h) for h in np.atleast_1d(hurst))
        return cls("fractional", len(hurst), hurst=hurst)

    @property
    def params(self) -> dict:
        if self.family == "riesz":
            return {"beta": self.beta}
        if self.family == "bessel":
            return {"alpha": self.alpha}
        return {"hurst": list(self.hurst or ())}

    def to_dict(self) -> dict:
        return {"family": self.family, "dim": self.dim, **self.params}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "CovarianceSpec":
        family = obj.get("family")
        if family not in FAMILIES:
            raise ParameterError(f"family must be one of {FAMILIES}, got {family!r}")
        dim = obj.get("dim")
        if not isinstance(dim, int) or isinstance(dim, bool):
            raise ParameterError("dim must be an integer")
        if family == "riesz":
            return cls("riesz", dim, beta=_float_field(obj, "beta"))
        if family == "bessel":
            return cls("bessel", dim, alpha=_float_field(obj, "alpha"))
        if "hurst" not in obj:
            raise ParameterError("fractional kernel requires 'hurst'")
        return cls("fractional", dim, hurst=tuple(float(h) for h in obj["hurst"]))

    @classmethod
    def from_json(cls, text: str) -> "CovarianceSpec":
        return cls.from_dict(json.loads(text))

    def label(self) -> str:
        p = self.params
        if self.family == "fractional":
            return "fractional(H=" + ",".join(f"{h:g}" for h in p["hurst"]) + ")"
        (k, v), = p.items()
        return f"{self.family}({k}={v:g})"


def _float_field(obj: dict, name: str) -> float:
    if name not in obj:
        raise ParameterError(f"{obj.get('family')} kernel requires {name!r}")
    return float(obj[name])


def validate(spec: CovarianceSpec) -> None:
    """Raise :class:`ParameterError` naming the first violated constraint."""
    d = spec.dim
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ParameterError(f"dim must be a positive integer, got {d!r}")
    if d > MAX_DIM:
        raise ParameterError(f"dim <= {MAX_DIM} supported, got {d}")
    if spec.family == "riesz":
        b = spec.beta
        if b is None:
            raise ParameterError("riesz kernel requires beta")
        if not 0.0 < b < min(2.0, d):
            raise ParameterError(f"riesz: 0 < beta < min(2, d) violated (beta={b}, d={d})")
    elif spec.family == "bessel":
        a = spec.alpha
        if a is None:
            raise ParameterError("bessel kernel requires alpha")
        if not max(d - 2.0, 0.0) < a < d:
            raise ParameterError(f"bessel: max(d-2, 0) < alpha < d violated (alpha={a}, d={d})")
    elif spec.family == "fractional":
        h = spec.hurst
        if h is None or len(h) != d:
            raise ParameterError(f"fractional: hurst must have length d={d}")
        for j, hj in enumerate(h):
            if not 0.5 < hj < 1.0:
                raise ParameterError(f"fractional: 1/2 < H_{j + 1} < 1 violated (H={hj})")
        if not sum(h) > d - 1:
            raise ParameterError(f"fractional: sum H_j > d - 1 violated (sum={sum(h):g}, d={d})")
    else:
        raise ParameterError(f"unknown family {spec.family!r}")


def _as_point(spec: CovarianceSpec, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a point in R^{spec.dim}, got shape {x.shape}")
    return x


# -- physical space ---------------------------------------------------------

def _bessel_quad(alpha: float, d: int, rho: float) -> float:
    # u = e^v removes both endpoint singularities of the u-integral
    a = 0.25 * rho * rho
    p = 0.5 * (alpha - d)

    def integrand(v):
        if v > 700.0 or -v > 700.0:
            return 0.0
        return math.exp(p * v - math.exp(v) - a * math.exp(-v))

    # integrand peaks where p - e^v + a e^-v = 0
    v0 = math.log(0.5 * (p + math.sqrt(p * p + 4.0 * a))) if a > 0 else math.log(max(p, 1e-300))
    left = integrate.quad(integrand, -np.inf, v0, epsabs=0.0, epsrel=1e-11, limit=200)[0]
    right = integrate.quad(integrand, v0, np.inf, epsabs=0.0, epsrel=1e-11, limit=200)[0]
    return left + right


def kernel_value(spec: CovarianceSpec, x) -> float:
    """Return f(x); the Bessel family is evaluated by adaptive quadrature."""
    x = _as_point(spec, x)
    if spec.family == "fractional":
        if np.any(x == 0.0):
            raise SingularPoint("fractional kernel is infinite on coordinate hyperplanes")
        return float(np.prod(np.abs(x) ** (2.0 * np.asarray(spec.hurst) - 2.0)))
    rho = float(np.linalg.norm(x))
    if rho == 0.0:
        raise SingularPoint(f"{spec.family} kernel is singular at the origin")
    if spec.family == "riesz":
        return rho ** (-spec.beta)
    return _bessel_quad(spec.alpha, spec.dim, rho)


def kernel_array(spec: CovarianceSpec, x: np.ndarray) -> np.ndarray:
    """Vectorized f over points ``x[..., d]``; +inf at singular points.

    The Bessel family uses the closed form ``2 (|x|/2)^nu K_nu(|x|)`` with
    ``nu = (alpha - d)/2``, which agrees with :func:`kernel_value`.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if spec.family == "fractional":
            expo = 2.0 * np.asarray(spec.hurst) - 2.0
            return np.prod(np.abs(x) ** expo, axis=-1)
        rho = np.sqrt(np.sum(x * x, axis=-1))
        if spec.family == "riesz":
            return rho ** (-spec.beta)
        nu = 0.5 * (spec.alpha - spec.dim)
        out = 2.0 * (0.5 * rho) ** nu * special.kv(nu, rho)
        return np.where(rho == 0.0, np.inf, out)


def radial_kernel(spec: CovarianceSpec) -> Callable[[np.ndarray], np.ndarray]:
    """f as a function of |x| (riesz and bessel only)."""
    if spec.family == "riesz":
        beta = spec.beta
        return lambda rho: np.asarray(rho, dtype=float) ** (-beta)
    if spec.family == "bessel":
        nu = 0.5 * (spec.alpha - spec.dim)
        return lambda rho: 2.0 * (0.5 * np.asarray(rho, dtype=float)) ** nu * special.kv(nu, rho)
    raise ValueError("fractional kernel is not radial")


# -- spectral side ----------------------------------------------------------

def spectral_density(spec: CovarianceSpec, xi) -> float:
    """dmu/dxi at ``xi`` with unit normalization constant."""
    xi = _as_point(spec, xi)
    if spec.family == "bessel":
        return float((1.0 + xi @ xi) ** (-0.5 * spec.alpha))
    if spec.family == "riesz":
        s = float(np.linalg.norm(xi))
        if s == 0.0:
            raise SingularPoint("riesz spectral density is singular at 0")
        return s ** (spec.beta - spec.dim)
    if np.any(xi == 0.0):
        raise SingularPoint("fractional spectral density is singular on coordinate hyperplanes")
    return float(np.prod(np.abs(xi) ** (1.0 - 2.0 * np.asarray(spec.hurst))))


def spectral_density_array(spec: CovarianceSpec, xi: np.ndarray) -> np.ndarray:
    """Vectorized density over ``xi[..., d]``; +inf where singular."""
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore"):
        if spec.family == "fractional":
            return np.prod(np.abs(xi) ** (1.0 - 2.0 * np.asarray(spec.hurst)), axis=-1)
        s2 = np.sum(xi * xi, axis=-1)
        if spec.family == "bessel":
            return (1.0 + s2) ** (-0.5 * spec.alpha)
        return np.sqrt(s2) ** (spec.beta - spec.dim)


def spectral_constant(spec: CovarianceSpec) -> float:
    """Constant c with ``int f(x) phi(x) dx = c int F(phi)(xi) rho(xi) dxi``.

    ``rho`` is the unit-normalized :func:`spectral_density`.
    """
    d = spec.dim
    if spec.family == "riesz":
        b = spec.beta
        return math.pi ** (-d / 2) * 2.0 ** (-b) * math.gamma((d - b) / 2) / math.gamma(b / 2)
    if spec.family == "bessel":
        return math.pi ** (-d / 2) * math.gamma(spec.alpha / 2)
    c = 1.0
    for h in spec.hurst:
        c *= math.pi ** -0.5 * 2.0 ** (2 * h - 2) * math.gamma(h - 0.5) / math.gamma(1 - h)
    return c


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2, 2pi, 4pi for d=1,2,3)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def fractional_angular_constant(hurst) -> float:
    """int over the unit sphere of prod_j |omega_j|^(1 - 2 H_j)."""
    hurst = np.asarray(hurst, dtype=float)
    g = special.gammaln(1.0 - hurst).sum() - special.gammaln(len(hurst) - hurst.sum())
    return 2.0 * math.exp(g)


def radial_weight(spec: CovarianceSpec) -> Callable[[np.ndarray], np.ndarray]:
    """m(s) with ``int phi(|xi|) mu(dxi) = int_0^inf phi(s) m(s) ds``.

    For the fractional family the product density factorizes in polar
    coordinates into s^(d - 2 sum H) times an angular constant.
    """
    d = spec.dim
    if spec.family == "riesz":
        c, p = sphere_area(d), spec.beta - 1.0
        return lambda s: c * np.asarray(s, dtype=float) ** p
    if spec.family == "bessel":
        c, a = sphere_area(d), spec.alpha
        return lambda s: c * np.asarray(s, dtype=float) ** (d - 1) * (1.0 + np.asarray(s) ** 2) ** (-0.5 * a)
    c = fractional_angular_constant(spec.hurst)
    p = 2.0 * d - 1.0 - 2.0 * sum(spec.hurst)
    return lambda s: c * np.asarray(s, dtype=float) ** p


def radial_exponents(spec: CovarianceSpec) -> tuple[float, float]:
    """Power-law exponents of m(s) as s -> 0 and s -> infinity."""
    d = spec.dim
    if spec.family == "riesz":
        return spec.beta - 1.0, spec.beta - 1.0
    if spec.family == "bessel":
        return d - 1.0, d - 1.0 - spec.alpha
    p = 2.0 * d - 1.0 - 2.0 * sum(spec.hurst)
    return p, p


def cell_mass(spec: CovarianceSpec, half_width: float) -> float:
    """Spectral mass of the cube [-a, a]^d around the origin, a = half_width."""
    a = float(half_width)
    d = spec.dim
    if spec.family == "fractional":
        return float(np.prod([2.0 * a ** (2 - 2 * h) / (2 - 2 * h) for h in spec.hurst]))
    if spec.family == "bessel":
        return float(integrate.nquad(
            lambda *xi: (1.0 + sum(v * v for v in xi)) ** (-0.5 * spec.alpha),
            [(-a, a)] * d, opts={"epsrel": 1e-10})[0])
    b = spec.beta
    # pyramid over a face: xi = s (1, y), y in [-1, 1]^(d-1), s in (0, a]
    if d == 1:
        face = 1.0
    elif d == 2:
        face = integrate.quad(lambda y: (1 + y * y) ** (0.5 * (b - d)), -1, 1, epsrel=1e-12)[0]
    else:
        face = integrate.dblquad(lambda y, z: (1 + y * y + z * z) ** (0.5 * (b - d)),
                                 -1, 1, -1, 1, epsrel=1e-11)[0]
    return 2.0 * d / b * face * a ** b


def axis_cell_mass(hurst: float, half_width: float) -> float:
    """int_{-a}^{a} |xi|^(1 - 2H) dxi for one fractional coordinate."""
    return 2.0 * half_width ** (2 - 2 * hurst) / (2 - 2 * hurst)
