"""Pathwise Malliavin derivative of the discrete scheme and the Malliavin matrix.

For the scheme of :mod:`homspde.solver` the solution at the final step is a
smooth function of the increments.  Its gradient with respect to the noise
density on step ``n`` is

    D_{t_n, y} u(t, x) = d u_M(x) / d dW_n(y) / dx^d,

computed for all ``n`` at once by a backward (adjoint) sweep that reuses
the frozen states and increments of the path.  It coincides with the
forward solution of the linear derivative equation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import TimeNotSaved
from .green import GreenSpec
from .kernels import CovarianceSpec
from .noise import GridSpec, spectral_weights
from .scaling import expected_exponents, smallball_lambda
from .solver import Coefficients, LinearFlow, Trajectory, run_with_noise


# -- helpers ----------------------------------------------------------------

def grid_index(grid: GridSpec, x) -> tuple[int, ...]:
    """Index tuple of a grid node given its coordinates; raises if off-grid."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = x / grid.spacing
    idx = np.rint(k)
    if x.shape != (grid.dim,) or np.any(np.abs(k - idx) > 1e-9):
        raise ValueError(f"point {x.tolist()} is not a grid node")
    return tuple(int(i) % grid.points_per_dim for i in idx)


def _as_indices(grid: GridSpec, points) -> list[tuple[int, ...]]:
    out = []
    for p in points:
        p = np.atleast_1d(p)
        if np.issubdtype(p.dtype, np.integer):
            out.append(tuple(int(i) % grid.points_per_dim for i in p))
        else:
            out.append(grid_index(grid, p))
    if len(set(out)) != len(out):
        raise ValueError("points must be distinct")
    return out


def hat(grid: GridSpec, g: np.ndarray) -> np.ndarray:
    """Discrete Fourier transform scaled by the cell volume (trailing axes)."""
    axes = tuple(range(-grid.dim, 0))
    return fft.fftn(g, axes=axes) * grid.cell_volume


def h_inner(grid: GridSpec, weights: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """<a, b>_H on the grid: Re sum_k weights[k] F a(xi_k) conj F b(xi_k)."""
    return float(np.real(np.sum(weights * hat(grid, a) * np.conj(hat(grid, b)))))


def apply_covariance(grid: GridSpec, weights: np.ndarray, h: np.ndarray) -> np.ndarray:
    """(K h)(y) = sum_y' f_L(y - y') h(y') dx^d."""
    axes = tuple(range(-grid.dim, 0))
    return np.real(fft.ifftn(weights * fft.fftn(h, axes=axes), axes=axes)) * grid.cell_volume * weights.size


# -- derivative field -------------------------------------------------------

@dataclass
class DerivativeField:
    grid: GridSpec
    time: float
    points: list
    steps: np.ndarray          # step indices n with r = n dt
    values: np.ndarray         # (len(steps), len(points)) + grid.shape
    leading: np.ndarray | None = None   # Gamma_disc(t - r, x_i - *) sigma(u(r, *))
    kernels: np.ndarray | None = None   # Gamma_disc(t - r, x_i - *)

    @property
    def r(self) -> np.ndarray:
        return self.steps * self.grid.dt


def _steps_from_r(traj: Trajectory, r_list) -> np.ndarray:
    if r_list is None:
        return np.arange(traj.steps)
    dt = traj.grid.dt
    out = []
    for r in r_list:
        n = round(r / dt)
        if abs(n * dt - r) > 1e-9 * max(dt, abs(r)) or not 0 <= n < traj.steps:
            raise TimeNotSaved(f"r={r} is not a saved time strictly before t={traj.steps * dt}")
        out.append(n)
    return np.asarray(out, dtype=int)


def derivative_field(traj: Trajectory, r_list=None, points=None) -> DerivativeField:
    """D_{r,*} u(t, x_i) for each r in ``r_list`` (default: every step) and each point."""
    grid = traj.grid
    if points is None:
        points = [(0,) * grid.dim]
    idx = _as_indices(grid, points)
    steps = _steps_from_r(traj, r_list)
    wanted = {int(n): k for k, n in enumerate(steps)}
    P = len(idx)
    flow = LinearFlow.build(traj.green, grid)
    axes = tuple(range(-grid.dim, 0))

    def rf(x):
        return fft.rfftn(x, axes=axes)

    def irf(x):
        return fft.irfftn(x, s=grid.shape, axes=axes)

    sig, drift = traj.coeffs.sigma, traj.coeffs.drift
    values = np.empty((len(steps), P) + grid.shape)
    kernels = np.empty_like(values)
    leading = np.empty_like(values)
    start = np.zeros((P,) + grid.shape)
    for p, i in enumerate(idx):
        start[(p,) + i] = 1.0
    vol = grid.cell_volume
    M = traj.steps

    # two sweeps on the same path: the full adjoint, and the linear one giving Gamma_disc
    lam_u, lin_u = start.copy(), start.copy()
    lam_v = np.zeros_like(start)
    lin_v = np.zeros_like(start)
    for n in range(M - 1, -1, -1):
        u_n = traj.states[n]
        s_n = sig.value(u_n)
        gain = sig.derivative(u_n) * traj.noise[n]
        if drift.name != "zero":
            gain = gain + drift.derivative(u_n) * grid.dt
        if traj.green.operator == "heat":
            nu = irf(flow.heat * rf(lam_u))
            nu_lin = irf(flow.heat * rf(lin_u))
            out, out_lin = nu, nu_lin
            lam_u = nu * (1.0 + gain)
            lin_u = nu_lin
        else:
            hu, hv = rf(lam_u), rf(lam_v)
            nu_u = irf(flow.cos * hu - flow.k_sin * hv)
            nu_v = irf(flow.sin_over_k * hu + flow.cos * hv)
            gu, gv = rf(lin_u), rf(lin_v)
            lin_u = irf(flow.cos * gu - flow.k_sin * gv)
            lin_v = irf(flow.sin_over_k * gu + flow.cos * gv)
            out, out_lin = nu_v, lin_v
            lam_u, lam_v = nu_u + gain * nu_v, nu_v
        k = wanted.get(n)
        if k is not None:
            values[k] = out / vol * s_n
            kernels[k] = out_lin / vol
            leading[k] = kernels[k] * s_n
    return DerivativeField(grid, M * grid.dt, idx, steps, values, leading, kernels)


def derivative_forward(traj: Trajectory, r: float, point) -> np.ndarray:
    """D_{r,*} u(t, x) by forward propagation of the tangent equation (small grids only).

    Builds the full Jacobian column by column: for each source node y a unit
    impulse sigma(u(r, y)) / dx^d enters at step r and is carried forward by
    the linearized scheme.  Cost grows like N^(2d); intended as a cross-check.
    """
    grid = traj.grid
    n0 = int(_steps_from_r(traj, [r])[0])
    target = _as_indices(grid, [point])[0]
    flow = LinearFlow.build(traj.green, grid)
    axes = tuple(range(-grid.dim, 0))
    size = int(np.prod(grid.shape))
    sig, drift = traj.coeffs.sigma, traj.coeffs.drift
    # batch of tangent states, one per source node
    eye = np.eye(size).reshape((size,) + grid.shape)
    kick = eye * sig.value(traj.states[n0]) / grid.cell_volume
    rf = lambda x: fft.rfftn(x, axes=axes)
    irf = lambda x: fft.irfftn(x, s=grid.shape, axes=axes)
    if traj.green.operator == "heat":
        z = irf(flow.heat * rf(kick))
        for n in range(n0 + 1, traj.steps):
            u_n = traj.states[n]
            gain = sig.derivative(u_n) * traj.noise[n]
            if drift.name != "zero":
                gain = gain + drift.derivative(u_n) * grid.dt
            z = irf(flow.heat * rf(z * (1.0 + gain)))
        out = z[(slice(None),) + target]
    else:
        zu = np.zeros_like(kick)
        zv = kick
        hu, hv = rf(zu), rf(zv)
        zu = irf(flow.cos * hu + flow.sin_over_k * hv)
        zv = irf(-flow.k_sin * hu + flow.cos * hv)
        for n in range(n0 + 1, traj.steps):
            u_n = traj.states[n]
            gain = sig.derivative(u_n) * traj.noise[n]
            if drift.name != "zero":
                gain = gain + drift.derivative(u_n) * grid.dt
            zv = zv + gain * zu
            hu, hv = rf(zu), rf(zv)
            zu = irf(flow.cos * hu + flow.sin_over_k * hv)
            zv = irf(-flow.k_sin * hu + flow.cos * hv)
        out = zu[(slice(None),) + target]
    return out.reshape(grid.shape)


def bump_derivative(traj: Trajectory, directions: np.ndarray, bump: float = 1e-6) -> np.ndarray:
    """Central difference of u(t, .) when every increment dW_n is shifted by bump dt K h_n.

    ``directions`` has shape ``(steps,) + grid.shape``.  The result is to be
    compared with sum_n dt <D_{t_n,*} u(t, x), h_n>_H.
    """
    grid = traj.grid
    weights = spectral_weights(traj.cov, grid)
    shift = np.stack([apply_covariance(grid, weights, h) for h in directions]) * grid.dt
    up = run_with_noise(traj.green, traj.coeffs, grid, traj.noise + bump * shift)[-1]
    down = run_with_noise(traj.green, traj.coeffs, grid, traj.noise - bump * shift)[-1]
    return (up - down) / (2.0 * bump)


def pair_with_directions(du: DerivativeField, weights: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """sum_n dt <D_{t_n,*} u(t, x_i), h_n>_H for each point i."""
    grid = du.grid
    hh = hat(grid, directions[du.steps])
    out = np.zeros(len(du.points))
    for p in range(len(du.points)):
        dd = hat(grid, du.values[:, p])
        out[p] = grid.dt * float(np.real(np.sum(weights * dd * np.conj(hh))))
    return out


# -- Malliavin matrix -------------------------------------------------------

@dataclass
class MalliavinMatrix:
    points: list
    entries: np.ndarray
    time: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))

    @property
    def det(self) -> float:
        return float(np.prod(self.eigenvalues))

    def is_psd(self, rtol: float = 1e-10) -> bool:
        return bool(self.eigenvalues.min() >= -rtol * np.trace(self.entries))

    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.entries, self.entries.T, rtol=1e-12, atol=0.0))


def _time_weights(du: DerivativeField) -> np.ndarray:
    """Left-point weights dt when every step is present, else trapezoid in r."""
    n = du.steps
    if len(n) == round(du.time / du.grid.dt) and np.array_equal(n, np.arange(len(n))):
        return np.full(len(n), du.grid.dt)
    r = du.r
    if len(r) == 1:
        return np.full(1, du.grid.dt)
    w = np.zeros(len(r))
    gaps = np.diff(r)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


def gram_matrix(du: DerivativeField, cov: CovarianceSpec, weights: np.ndarray | None = None) -> MalliavinMatrix:
    """Entries int <D_r u(t, x_i), D_r u(t, x_j)>_H dr over the derivative times."""
    grid = du.grid
    if weights is None:
        weights = spectral_weights(cov, grid)
    tw = _time_weights(du)
    P = len(du.points)
    ent = np.zeros((P, P))
    for k in range(len(du.steps)):
        h = hat(grid, du.values[k])
        flat = h.reshape(P, -1)
        wf = weights.reshape(-1)
        ent += tw[k] * np.real((flat * wf) @ np.conj(flat).T)
    ent = 0.5 * (ent + ent.T)
    return MalliavinMatrix(list(du.points), ent, du.time)


def malliavin_matrix(traj: Trajectory, points, weights: np.ndarray | None = None) -> MalliavinMatrix:
    """Full Gram matrix on [0, t] for a path, left-point in r."""
    du = derivative_field(traj, None, points)
    return gram_matrix(du, traj.cov, weights)


# -- decomposition ----------------------------------------------------------

@dataclass
class DecompositionTerms:
    eps: float
    a11: float
    a12: float
    a13: float
    a2: float
    a1: float = math.nan
    cross: float = math.nan
    quadratic: float = math.nan


def decomposition_table(traj: Trajectory, cov: CovarianceSpec, points, xi, eps_list,
                        weights: np.ndarray | None = None) -> list[DecompositionTerms]:
    """A11, A12, A13, A2 over the windows [t - eps, t] for each eps.

    With lead = sum_i xi_i Gamma(t - r, x_i - *) sigma(u(r, *)) and the
    correction a = sum_i xi_i D_r u(t, x_i) - lead:

    * A1  = int ||lead||^2,  A2 = int ||a||^2
    * A11 = sum_i xi_i^2 int ||Gamma(t - r, x_i - *) sigma(u(t, x_i))||^2
    * A12 = the i != j terms of the same frozen expression
    * A13 = A1 - A11 - A12, the error of freezing sigma at (t, x_i)

    so that xi^T M_eps xi = A1 + A2 + 2 int <lead, a>.
    """
    grid = traj.grid
    if weights is None:
        weights = spectral_weights(cov, grid)
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("xi must be a unit vector")
    M = traj.steps
    windows = sorted({int(round(e / grid.dt)) for e in eps_list})
    if windows[0] < 1 or windows[-1] > M:
        raise ValueError("every eps must satisfy dt <= eps <= t")
    K = windows[-1]
    du = derivative_field(traj, (np.arange(M - K, M)) * grid.dt, points)
    idx = du.points
    sig_final = traj.coeffs.sigma.value(np.array([traj.final[i] for i in idx]))
    P = len(idx)
    acc = dict(a1=0.0, a2=0.0, cross=0.0, a11=0.0, a12=0.0)
    snapshots = {}
    dt = grid.dt
    pair_w = np.outer(xi, xi) * (1.0 - np.eye(P))
    for back in range(1, K + 1):
        k = K - back                 # field index for step n = M - back
        lead = np.tensordot(xi, du.leading[k], axes=1)
        corr = np.tensordot(xi, du.values[k], axes=1) - lead
        lh, ch = hat(grid, lead), hat(grid, corr)
        acc["a1"] += dt * float(np.sum(weights * np.abs(lh) ** 2))
        acc["a2"] += dt * float(np.sum(weights * np.abs(ch) ** 2))
        acc["cross"] += dt * float(np.real(np.sum(weights * lh * np.conj(ch))))
        fh = hat(grid, du.kernels[k] * sig_final.reshape((P,) + (1,) * grid.dim)).reshape(P, -1)
        g = np.real((fh * weights.reshape(-1)) @ np.conj(fh).T)
        acc["a11"] += dt * float(np.sum(xi ** 2 * np.diag(g)))
        acc["a12"] += dt * float(np.sum(pair_w * g))
        if back in windows:
            snapshots[back] = dict(acc)
    out = []
    for e in eps_list:
        s = snapshots[int(round(e / dt))]
        a13 = s["a1"] - s["a11"] - s["a12"]
        out.append(DecompositionTerms(float(e), s["a11"], s["a12"], a13, s["a2"], s["a1"], s["cross"],
                                      s["a1"] + s["a2"] + 2 * s["cross"]))
    return out


def decomposition_terms(traj: Trajectory, cov: CovarianceSpec, green: GreenSpec, coeffs: Coefficients,
                        points, xi, eps: float) -> DecompositionTerms:
    """Single-window version of :func:`decomposition_table`."""
    if traj.green != green or traj.coeffs != coeffs:
        raise ValueError("trajectory was produced with a different operator or coefficients")
    return decomposition_table(traj, cov, points, xi, [eps])[0]


def dominance_threshold(table: list[DecompositionTerms]) -> float | None:
    """Largest eps such that a11 > |a12| + |a13| + a2 for it and every smaller eps in the table."""
    rows = sorted(table, key=lambda r: r.eps)
    best = None
    for r in rows:
        if r.a11 > abs(r.a12) + abs(r.a13) + r.a2:
            best = r.eps
        else:
            break
    return best


# -- small-ball probe -------------------------------------------------------

def smallball_probe(matrices, delta_grid, cov: CovarianceSpec | None = None, green: GreenSpec | None = None,
                    kappa1: float | None = None, kappa2: float | None = None) -> dict:
    """Empirical P(det M <= delta) on a decreasing delta grid, plus the exponent lambda."""
    mats = list(matrices)
    if len(mats) < 500:
        raise ValueError("the probe needs at least 500 matrices")
    deltas = np.asarray(delta_grid, dtype=float)
    if np.any(deltas <= 0) or np.any(np.diff(deltas) >= 0):
        raise ValueError("delta_grid must be positive and strictly decreasing")
    dets = np.array([m.det for m in mats])
    tails = np.array([float(np.mean(dets <= d)) for d in deltas])
    if np.any(np.diff(tails) > 0):
        raise AssertionError("empirical tail increased as delta decreased")
    n = len(mats[0].points)
    lam = None
    if cov is not None and green is not None:
        lam = smallball_lambda(expected_exponents(cov, green, kappa1, kappa2), n)
    return {"delta": deltas.tolist(), "tail": tails.tolist(), "lambda": lam,
            "reference": None if lam is None else (deltas ** lam).tolist(),
            "det_min": float(dets.min()), "det_median": float(np.median(dets))}


def malliavin_ensemble(cov, green, coeffs, grid, T, seed, replicas, points) -> list[MalliavinMatrix]:
    """One full Gram matrix per replica path."""
    from .solver import simulate_path
    weights = spectral_weights(cov, grid)
    return [malliavin_matrix(simulate_path(cov, green, coeffs, grid, T, seed, i), points, weights)
            for i in range(replicas)]


# -- CSV --------------------------------------------------------------------

def decomposition_csv(rows: list[DecompositionTerms]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "a11", "a12", "a13", "a2"])
    for r in rows:
        w.writerow([f"{r.eps:.10g}", f"{r.a11:.10e}", f"{r.a12:.10e}", f"{r.a13:.10e}", f"{r.a2:.10e}"])
    return buf.getvalue()


def smallball_csv(probe: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "tail", "lambda"])
    lam = "" if probe["lambda"] is None else f"{probe['lambda']:.10g}"
    for d, t in zip(probe["delta"], probe["tail"]):
        w.writerow([f"{d:.10e}", f"{t:.10g}", lam])
    return buf.getvalue()
