"""Small-time scaling integrals and log-log exponent fits.

All H inner products use the unit-normalized spectral density of
:mod:`homspde.kernels`; physical-space evaluations are divided by
:func:`~homspde.kernels.spectral_constant` so the two routes agree.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from . import _quad
from .errors import (DegenerateFit, KappaOutOfRange, MonteCarloUnstable,
                     ParameterError, ZeroShift)
from .green import GreenSpec, quadrature_measure
from .kernels import (CovarianceSpec, kernel_array, radial_weight, sphere_area,
                      spectral_constant, validate)

TOLERANCE = 0.05
MC_PAIRS = 100_000
MC_SEED = 20261014
MC_MAX_RELERR = 0.10


# -- grids and reports ------------------------------------------------------

@dataclass(frozen=True)
class EpsGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if len(v) < 6:
            raise ValueError("an epsilon grid needs at least 6 points")
        if np.any(v <= 0) or v[0] > 1.0:
            raise ValueError("epsilon values must lie in (0, 1]")
        if np.any(np.diff(v) >= 0):
            raise ValueError("epsilon values must be strictly decreasing")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def dyadic(cls, kmin: int = 4, kmax: int = 12) -> "EpsGrid":
        return cls(tuple(2.0 ** -k for k in range(kmin, kmax + 1)))

    @classmethod
    def geometric(cls, eps_max: float, count: int, ratio: float = 0.5) -> "EpsGrid":
        return cls(tuple(eps_max * ratio ** k for k in range(count)))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


CSV_FIELDS = ("kind", "family", "operator", "dim", "params", "kappa1", "kappa2",
              "w", "fitted", "stderr", "expected", "pass")


@dataclass
class ExponentReport:
    kind: str
    family: str
    operator: str
    dim: int
    params: dict
    kappa1: float | None
    kappa2: float | None
    w: tuple | None
    fitted: float
    stderr: float
    expected: float
    passed: bool
    tolerance: float = TOLERANCE
    degenerate: bool = False
    eps: tuple = field(default_factory=tuple)
    values: tuple = field(default_factory=tuple)

    def to_row(self) -> dict:
        def num(x):
            return "" if x is None else repr(float(x))
        return {
            "kind": self.kind, "family": self.family, "operator": self.operator,
            "dim": self.dim, "params": json.dumps(self.params, sort_keys=True),
            "kappa1": num(self.kappa1), "kappa2": num(self.kappa2),
            "w": "" if self.w is None else json.dumps([float(x) for x in self.w]),
            "fitted": f"{self.fitted:.6f}", "stderr": f"{self.stderr:.6f}",
            "expected": f"{self.expected:.6f}", "pass": str(bool(self.passed)).lower(),
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["w"] = None if self.w is None else list(self.w)
        return out


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(rep.to_row())
    return buf.getvalue()


# -- fitting ----------------------------------------------------------------

def fit_slope(pairs) -> tuple[float, float]:
    """OLS slope of log(value) on log(eps) with its standard error."""
    pairs = list(pairs)
    if len(pairs) < 4:
        raise DegenerateFit(f"need at least 4 points, got {len(pairs)}")
    x = np.log(np.array([p[0] for p in pairs], dtype=float))
    vals = np.array([p[1] for p in pairs], dtype=float)
    if np.any(~(vals > 0)):
        raise DegenerateFit("all values must be positive for a log-log fit")
    y = np.log(vals)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300:
        raise DegenerateFit("zero variance in log(eps)")
    slope = float(xc @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    dof = len(x) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


# -- closed-form exponent table ---------------------------------------------

def expected_exponents(cov: CovarianceSpec, green: GreenSpec,
                       kappa1: float | None = None, kappa2: float | None = None) -> dict:
    """Exponents eta, eta1, eta2, eta3 and the admissible Hoelder ranges.

    ``kappa1`` / ``kappa2`` default to half of their admissible maximum.
    Raises :class:`KappaOutOfRange` if a supplied value is outside (0, max).
    """
    validate(cov)
    d = cov.dim
    if green.dim != d:
        raise ParameterError(f"dimension mismatch: kernel d={d}, operator d={green.dim}")
    fam, op = cov.family, green.operator
    H = np.asarray(cov.hurst, dtype=float) if fam == "fractional" else None

    if op == "heat":
        if fam == "riesz":
            eta = (2 - cov.beta) / 2
            k1max, k2max = (2 - cov.beta) / 4, (2 - cov.beta) / 2
            eta2 = 1.0
        elif fam == "bessel":
            eta = (cov.alpha - d) / 2 + 1
            k1max, k2max = (2 - d + cov.alpha) / 4, (2 - d + cov.alpha) / 2
            eta2 = 1.0
        else:
            eta = H.sum() - d + 1
            k1max, k2max = eta / 2, eta
            eta2 = float(min(H.sum() - H[k] - d + 2 for k in range(d)))
    else:
        if fam == "riesz":
            eta = 3 - cov.beta
            k1max = k2max = (2 - cov.beta) / 2
            eta2 = 3.0
        elif fam == "bessel":
            eta = cov.alpha + 3 - d
            k1max = k2max = (cov.alpha - d + 2) / 2
            eta2 = 3.0
        else:
            eta = 2 * H.sum() - 2 * d + 3
            if d == 1:
                k1max = k2max = float(H[0])
                eta2 = 3.0
            elif d == 2:
                k1max = k2max = float(H.sum() - 1)
                eta2 = float(min(2 * H[0] + 1, 2 * H[1] + 1))
            else:
                k1max = k2max = float(min(H.sum() - 2, *(H - 0.5)))
                eta2 = float(min(2 * (H.sum() - H[k]) - 1 for k in range(3)))

    if kappa1 is None:
        kappa1 = 0.5 * k1max
    if kappa2 is None:
        kappa2 = 0.5 * k2max
    if not 0 < kappa1 < k1max:
        raise KappaOutOfRange(f"kappa1={kappa1} outside (0, {k1max:g})")
    if not 0 < kappa2 < k2max:
        raise KappaOutOfRange(f"kappa2={kappa2} outside (0, {k2max:g})")

    if op == "heat":
        eta1, eta3 = eta + kappa1, eta + kappa2 / 2
    else:
        eta1, eta3 = eta + kappa1, eta + kappa2
    table = {"eta": float(eta), "eta1": float(eta1), "eta2": float(eta2), "eta3": float(eta3),
             "kappa1": float(kappa1), "kappa2": float(kappa2),
             "kappa1_max": float(k1max), "kappa2_max": float(k2max)}
    for key in ("eta1", "eta2", "eta3"):
        if not table[key] > table["eta"]:
            raise AssertionError(f"{key}={table[key]} is not strictly above eta={table['eta']}")
    return table


def smallball_lambda(exps: dict, n: int) -> float:
    """min{(eta_i - eta)/(n eta), 1/n, 2/(n eta)} for i = 1, 2, 3."""
    eta = exps["eta"]
    cands = [(exps[k] - eta) / (n * eta) for k in ("eta1", "eta2", "eta3")]
    return float(min(*cands, 1.0 / n, 2.0 / (n * eta)))


# -- radial time factors ----------------------------------------------------

def _heat_time_factor(eps: float, s: float, kappa: float = 0.0) -> float:
    """int_0^eps r^kappa exp(-r s^2) dr."""
    x = eps * s * s
    if x < 1e-10:
        return eps ** (kappa + 1) * (1.0 / (kappa + 1) - x / (kappa + 2))
    if kappa == 0.0:
        return -math.expm1(-x) / (s * s)
    return math.gamma(kappa + 1) * special.gammainc(kappa + 1, x) / s ** (2 * kappa + 2)


def _wave_time_factor(eps: float, s: float) -> float:
    """int_0^eps sin(r s)^2 / s^2 dr."""
    x = eps * s
    if x < 1e-2:
        x2 = x * x
        return eps ** 3 * (1.0 / 3 - 2.0 * x2 / 15 + 2.0 * x2 * x2 / 315)
    return (2 * x - math.sin(2 * x)) / (4 * s ** 3)


def validate_pair(cov: CovarianceSpec, green: GreenSpec) -> None:
    if cov.dim != green.dim:
        raise ParameterError(f"dimension mismatch: kernel d={cov.dim}, operator d={green.dim}")


def g_eps(cov: CovarianceSpec, green: GreenSpec, eps: float, _allow_large: bool = False) -> float:
    """int_0^eps int |FGamma(s)(xi)|^2 mu(dxi) ds by radial reduction."""
    if cov.dim != green.dim:
        raise ParameterError(f"dimension mismatch: kernel d={cov.dim}, operator d={green.dim}")
    eps = float(eps)
    if not eps > 0 or (eps > 1 and not _allow_large):
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    m = radial_weight(cov)
    if green.operator == "heat":
        split = 1.0 / math.sqrt(eps)

        def fn(s):
            return _heat_time_factor(eps, s) * m(s)
        _quad.check_shells(fn, split)
        return _quad.half_line(fn, split, smooth_tail=fn)
    split = 1.0 / eps

    def fn(s):
        return _wave_time_factor(eps, s) * m(s)
    _quad.check_shells(lambda s: m(s) * min(eps ** 3 / 3, eps / (2 * s * s)), split)
    return _quad.half_line(fn, split,
                           smooth_tail=lambda s: eps * m(s) / (2 * s * s),
                           osc_tail=lambda s: -m(s) / (4 * s ** 3), osc_weight="sin", omega=2 * eps)


def energy(cov: CovarianceSpec, green: GreenSpec, r: float) -> float:
    """||Gamma(r)||_H^2 = int |FGamma(r)(xi)|^2 mu(dxi)."""
    r = float(r)
    m = radial_weight(cov)
    if green.operator == "heat":
        split = 1.0 / math.sqrt(r)

        def fn(s):
            return math.exp(-r * s * s) * m(s)
        return _quad.half_line(fn, split, smooth_tail=fn)
    split = 1.0 / r

    def head(s):
        return (r * np.sinc(r * s / math.pi)) ** 2 * m(s)
    _quad.check_shells(lambda s: m(s) * min(r * r, 1.0 / (s * s)), split)
    return _quad.half_line(head, split,
                           smooth_tail=lambda s: m(s) / (2 * s * s),
                           osc_tail=lambda s: -m(s) / (2 * s * s), osc_weight="cos", omega=2 * r)


# -- shifted and weighted cross integrals -----------------------------------

def h4_kind_i(cov: CovarianceSpec, green: GreenSpec, eps: float, kappa1: float) -> float:
    """int_0^eps r^kappa1 ||Gamma(r)||_H^2 dr."""
    m = radial_weight(cov)
    if green.operator == "heat":
        split = 1.0 / math.sqrt(eps)

        def fn(s):
            return _heat_time_factor(eps, s, kappa1) * m(s)
        _quad.check_shells(fn, split)
        return _quad.half_line(fn, split, smooth_tail=fn)

    def outer(y):
        r = eps * math.exp(-y)
        if r < 1e-200:
            return 0.0
        return r ** (kappa1 + 1) * energy(cov, green, r)
    return _quad._quad(outer, 0.0, np.inf, epsrel=1e-8)


def _kummer_negative(a: float, b: float, z: float) -> float:
    """1F1(a; b; z) for z <= 0, switching to the large-|z| expansion."""
    if z > -1e3:
        return float(special.hyp1f1(a, b, z))
    u = -1.0 / z
    series = 1.0 + a * (a - b + 1) * u + a * (a + 1) * (a - b + 1) * (a - b + 2) * u * u / 2
    return math.exp(special.gammaln(b) - special.gammaln(b - a)) * (-z) ** (-a) * series


def heat_shift_inner(cov: CovarianceSpec, r: float, w) -> float:
    """Re int exp(-r |xi|^2) exp(-i w.xi) mu(dxi), i.e. <p_r(*), p_r(w + *)>_H."""
    w = np.asarray(w, dtype=float)
    d = cov.dim
    if cov.family == "riesz":
        b = cov.beta
        z = -float(w @ w) / (4 * r)
        return 0.5 * sphere_area(d) * math.gamma(b / 2) * r ** (-b / 2) * _kummer_negative(b / 2, d / 2, z)
    if cov.family == "fractional":
        out = 1.0
        for hj, wj in zip(cov.hurst, w):
            a = 1.0 - hj
            out *= math.gamma(a) * r ** (-a) * _kummer_negative(a, 0.5, -wj * wj / (4 * r))
        return out
    a = cov.alpha
    w2 = float(w @ w)

    def fn(u):
        # t = u^(2/a) absorbs the t^(a/2 - 1) endpoint singularity
        t = u ** (2.0 / a)
        return math.exp(-t - w2 / (4 * (r + t))) * (math.pi / (r + t)) ** (d / 2)
    val = _quad._quad(fn, 0.0, 1.0) + _quad._quad(fn, 1.0, np.inf)
    return 2.0 / a * val / math.gamma(a / 2)


def _check_shift(w, d, required=True):
    if w is None:
        raise ZeroShift("a shift w is required")
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (d,):
        raise ParameterError(f"shift w must have {d} coordinates")
    if required and not np.any(w != 0):
        raise ZeroShift("shift w must be nonzero")
    return w


def h4_kind_ii(cov: CovarianceSpec, green: GreenSpec, eps: float, w) -> float:
    """int_0^eps <Gamma(r,*), Gamma(r, w+*)>_H dr."""
    w = _check_shift(w, cov.dim)
    if green.operator == "heat":
        return _quad._quad(lambda r: heat_shift_inner(cov, r, w), 0.0, eps, epsrel=1e-9)
    return wave_pair_integral(cov, green, [eps], w, 0.0)[0]


def wave_pair_integral(cov: CovarianceSpec, green: GreenSpec, eps_values, w, kappa: float = 0.0,
                       order: int = 12, time_nodes: int = 10) -> np.ndarray:
    """int_0^eps <|*|^kappa Gamma(r,*), Gamma(r, w+*)>_H dr via deterministic point clouds.

    Both clouds scale linearly in ``r`` with weights ``r^(1 + power)``, so the
    time integral becomes ``eps^(3+kappa) int_0^1 v^(2+kappa) F(eps v) dv``,
    done by Gauss-Jacobi.
    """
    w = _check_shift(w, cov.dim)
    x = quadrature_measure(green, 1.0, order, power=kappa)
    y = quadrature_measure(green, 1.0, order)
    diff = (x.points[:, None, :] - y.points[None, :, :]).reshape(-1, cov.dim)
    wts = np.outer(x.weights, y.weights).ravel()
    nodes, weights = special.roots_jacobi(time_nodes, 0.0, 2.0 + kappa)
    v = 0.5 * (nodes + 1.0)
    weights = weights * 0.5 ** (3.0 + kappa)
    c = spectral_constant(cov)
    out = []
    for eps in eps_values:
        acc = 0.0
        for vk, wk in zip(v, weights):
            acc += wk * float(wts @ kernel_array(cov, eps * vk * diff + w))
        out.append(eps ** (3.0 + kappa) * acc / c)
    return np.asarray(out)


def heat_weighted_mc(cov: CovarianceSpec, eps_values, kappa: float, w, n_pairs: int = MC_PAIRS,
                     seed: int = MC_SEED, n_batches: int = 100, n_boot: int = 200):
    """Monte Carlo estimate of int_0^eps <|*|^kappa p_r, p_r(w+*)>_H dr.

    Draws r = eps V with V uniform and X, Y independent N(0, r I); the same
    draws are reused on every grid point.  Returns ``(values, relative stderr)``
    with the error bar from a bootstrap over batch means.
    """
    d = cov.dim
    w = np.asarray(w, dtype=float).reshape(d)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    v = rng.random(n_pairs)
    z1 = rng.standard_normal((n_pairs, d))
    z2 = rng.standard_normal((n_pairs, d))
    boot_idx = rng.integers(0, n_batches, size=(n_boot, n_batches))
    c = spectral_constant(cov)
    vals, rel = [], []
    for eps in eps_values:
        sr = np.sqrt(eps * v)[:, None]
        xs = sr * z1
        sample = np.linalg.norm(xs, axis=1) ** kappa * kernel_array(cov, xs - sr * z2 + w)
        if not np.all(np.isfinite(sample)):
            raise MonteCarloUnstable("kernel evaluated at its singularity")
        mean = sample.mean()
        batch = sample[: n_pairs - n_pairs % n_batches].reshape(n_batches, -1).mean(axis=1)
        boot = batch[boot_idx].mean(axis=1)
        err = boot.std(ddof=1) / mean if mean > 0 else np.inf
        if err > MC_MAX_RELERR:
            raise MonteCarloUnstable(f"bootstrap relative stderr {err:.3f} at eps={eps:g}")
        vals.append(eps * mean / c)
        rel.append(err)
    return np.asarray(vals), np.asarray(rel)


def h4_integrals(kind: str, cov: CovarianceSpec, green: GreenSpec, eps_values,
                 kappa1: float | None = None, kappa2: float | None = None, w=None,
                 seed: int = MC_SEED) -> np.ndarray:
    """Evaluate a cross integral of kind i, ii or iii on each eps value."""
    validate(cov)
    validate_pair(cov, green)
    eps_values = [float(e) for e in eps_values]
    if kind == "i":
        if kappa1 is None:
            raise ParameterError("kind i requires kappa1")
        return np.array([h4_kind_i(cov, green, e, kappa1) for e in eps_values])
    if kind == "ii":
        w = _check_shift(w, cov.dim)
        if green.operator == "wave":
            return wave_pair_integral(cov, green, eps_values, w, 0.0)
        return np.array([h4_kind_ii(cov, green, e, w) for e in eps_values])
    if kind == "iii":
        if kappa2 is None:
            raise ParameterError("kind iii requires kappa2")
        if green.operator == "wave":
            w = _check_shift(w, cov.dim)
            return wave_pair_integral(cov, green, eps_values, w, kappa2)
        w = _check_shift(w, cov.dim, required=False)
        return heat_weighted_mc(cov, eps_values, kappa2, w, seed=seed)[0]
    raise ParameterError(f"kind must be one of i, ii, iii, got {kind!r}")


# -- fits -------------------------------------------------------------------

def _report(kind, cov, green, k1, k2, w, eps, vals, expected, two_sided):
    vals = np.asarray(vals, dtype=float)
    if np.all(np.abs(vals) < 1e-300):
        return ExponentReport(kind, cov.family, green.operator, cov.dim, cov.params, k1, k2,
                              None if w is None else tuple(float(x) for x in w),
                              math.nan, 0.0, expected, True, degenerate=True,
                              eps=tuple(eps), values=tuple(vals))
    fitted, stderr = fit_slope(zip(eps, vals))
    ok = abs(fitted - expected) <= TOLERANCE if two_sided else fitted >= expected - TOLERANCE
    return ExponentReport(kind, cov.family, green.operator, cov.dim, cov.params, k1, k2,
                          None if w is None else tuple(float(x) for x in w),
                          fitted, stderr, expected, bool(ok), eps=tuple(eps), values=tuple(vals))


def h3_fit(cov: CovarianceSpec, green: GreenSpec, grid: EpsGrid | None = None) -> ExponentReport:
    """Fit the small-eps slope of g(eps) and compare with eta."""
    grid = grid or EpsGrid.dyadic()
    exps = expected_exponents(cov, green)
    vals = [g_eps(cov, green, e) for e in grid]
    return _report("eta", cov, green, None, None, None, grid.values, vals, exps["eta"], True)


def h4_fit(kind: str, cov: CovarianceSpec, green: GreenSpec, kappa1: float | None = None,
           kappa2: float | None = None, w=None, grid: EpsGrid | None = None,
           seed: int = MC_SEED) -> ExponentReport:
    """Fit a cross integral; passes when the slope is at least the bound minus 0.05."""
    grid = grid or EpsGrid.dyadic()
    exps = expected_exponents(cov, green, kappa1, kappa2)
    label = {"i": "eta1", "ii": "eta2", "iii": "eta3"}.get(kind)
    if label is None:
        raise ParameterError(f"kind must be one of i, ii, iii, got {kind!r}")
    vals = h4_integrals(kind, cov, green, grid.values, kappa1, kappa2, w, seed)
    k1 = kappa1 if kind == "i" else None
    k2 = kappa2 if kind == "iii" else None
    return _report(label, cov, green, k1, k2, w if kind != "i" else None,
                   grid.values, vals, exps[label], False)


def shifted_energy_integral(cov: CovarianceSpec, green: GreenSpec, eps: float, w) -> float:
    """int_0^eps <Gamma(r,*), Gamma(r,w+*)>_H dr (alias for kind ii)."""
    return float(h4_integrals("ii", cov, green, [eps], w=w)[0])


def localization_ratio(cov: CovarianceSpec, green: GreenSpec, w, m: int) -> float:
    """Off-diagonal integral over [0, 2^-m] divided by v_m = g(2^-m)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    eps = 2.0 ** -m
    return shifted_energy_integral(cov, green, eps, w) / g_eps(cov, green, eps)
