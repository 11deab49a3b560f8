"""Spectral time stepping of the mild solution on a periodic grid.

Heat:  u_{n+1} = P(dt) [u_n + sigma(u_n) dW_n + b(u_n) dt]   (exponential Euler)
Wave:  v += sigma(u_n) dW_n + b(u_n) dt, then (u, v) <- R(dt) (u, v)  (trigonometric)

``P`` and ``R`` are exact flows of the linear operator, so the linear case
carries only the left-point time discretization of the noise.  Initial data
vanish.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from .errors import ConfigError, DegenerateFit, UnstableStep
from .green import GreenSpec
from .kernels import CovarianceSpec, validate
from .noise import GridSpec, replica_generator, spectral_weights
from .scaling import fit_slope

OVERFLOW_GUARD = 1e8
CHUNK_STEPS = 16


# -- coefficient presets ----------------------------------------------------

@dataclass(frozen=True)
class Preset:
    """Smooth scalar function with bounded derivatives."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _PRESETS:
            raise ConfigError(f"unknown preset {self.name!r}; choose from {sorted(_PRESETS)}")

    def value(self, u: np.ndarray) -> np.ndarray:
        return _PRESETS[self.name][0](u, **self.params)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        return _PRESETS[self.name][1](u, **self.params)

    def lower_bound(self) -> float:
        """inf |f| over the real line."""
        return _PRESETS[self.name][2](**self.params)

    @property
    def is_constant(self) -> bool:
        return self.name in ("zero", "constant")

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}

    @classmethod
    def from_dict(cls, obj) -> "Preset":
        if isinstance(obj, str):
            return cls(obj)
        obj = dict(obj)
        name = obj.pop("name", None)
        try:
            return cls(name, {k: float(v) for k, v in obj.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _const(u, c=1.0):
    return np.full_like(u, c)


def _saturate(u, clip):
    # smooth clipping: clip * tanh(u / clip) keeps every derivative bounded
    return clip * np.tanh(u / clip)


_PRESETS = {
    "zero": (lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), lambda: 0.0),
    "constant": (_const, lambda u, c=1.0: np.zeros_like(u), lambda c=1.0: abs(c)),
    "affine": (lambda u, a=1.0, b=0.5, clip=1.0: a + b * _saturate(u, clip),
               lambda u, a=1.0, b=0.5, clip=1.0: b / np.cosh(u / clip) ** 2,
               lambda a=1.0, b=0.5, clip=1.0: max(abs(a) - abs(b) * clip, 0.0)),
    "sine": (lambda u, a=1.0, b=0.5: a + b * np.sin(u),
             lambda u, a=1.0, b=0.5: b * np.cos(u),
             lambda a=1.0, b=0.5: max(abs(a) - abs(b), 0.0)),
    "cosine": (lambda u, a=0.0, b=1.0: a + b * np.cos(u),
               lambda u, a=0.0, b=1.0: -b * np.sin(u),
               lambda a=0.0, b=1.0: max(abs(a) - abs(b), 0.0)),
}


@dataclass(frozen=True)
class Coefficients:
    sigma: Preset
    drift: Preset = Preset("zero")
    sigma_floor: float | None = None

    def __post_init__(self):
        floor = self.sigma.lower_bound()
        if self.sigma_floor is None:
            object.__setattr__(self, "sigma_floor", floor)
        elif not 0 <= self.sigma_floor <= floor + 1e-15:
            raise ConfigError(f"sigma_floor {self.sigma_floor} exceeds inf|sigma| = {floor}")

    @property
    def is_linear(self) -> bool:
        return self.sigma.is_constant and self.drift.name == "zero"

    @classmethod
    def constant(cls, c: float = 1.0) -> "Coefficients":
        return cls(Preset("constant", {"c": float(c)}))

    @classmethod
    def bounded_away(cls) -> "Coefficients":
        """sigma = 1 + sin(u)/2, no drift; sigma_floor = 1/2."""
        return cls(Preset("sine", {"a": 1.0, "b": 0.5}))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.to_dict(), "drift": self.drift.to_dict(),
                "sigma_floor": self.sigma_floor}

    @classmethod
    def from_dict(cls, obj: dict) -> "Coefficients":
        if "sigma" not in obj:
            raise ConfigError("coefficients need a 'sigma' preset")
        return cls(Preset.from_dict(obj["sigma"]), Preset.from_dict(obj.get("drift", "zero")),
                   obj.get("sigma_floor"))


# -- linear propagators -----------------------------------------------------

def propagator(green: GreenSpec, dt: float, xi) -> float | np.ndarray:
    """One-step linear flow at a mode.

    Heat returns the multiplier exp(-dt |xi|^2 / 2); wave returns the 2x2
    matrix acting on (mode, mode velocity).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    k = float(np.linalg.norm(xi))
    if green.operator == "heat":
        return math.exp(-0.5 * dt * k * k)
    c = math.cos(dt * k)
    s_over_k = dt * float(np.sinc(dt * k / math.pi))
    return np.array([[c, s_over_k], [-k * math.sin(dt * k), c]])


def _half_modes(grid: GridSpec) -> np.ndarray:
    """|xi_k| on the rfftn layout."""
    full = np.abs(grid.frequencies())
    half = 2.0 * math.pi * fft.rfftfreq(grid.points_per_dim, d=grid.spacing)
    mesh = np.meshgrid(*([full] * (grid.dim - 1) + [half]), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


@dataclass
class LinearFlow:
    """Per-mode coefficients of P(dt) or R(dt) on the rfftn layout."""

    operator: str
    heat: np.ndarray | None = None
    cos: np.ndarray | None = None
    sin_over_k: np.ndarray | None = None
    k_sin: np.ndarray | None = None

    @classmethod
    def build(cls, green: GreenSpec, grid: GridSpec, dt: float | None = None) -> "LinearFlow":
        dt = grid.dt if dt is None else dt
        k = _half_modes(grid)
        if green.operator == "heat":
            return cls("heat", heat=np.exp(-0.5 * dt * k * k))
        return cls("wave", cos=np.cos(dt * k), sin_over_k=dt * np.sinc(dt * k / math.pi),
                   k_sin=k * np.sin(dt * k))


# -- ensembles and trajectories ---------------------------------------------

@dataclass
class FieldEnsemble:
    grid: GridSpec
    time: float
    replicas: np.ndarray
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        self.replicas = np.asarray(self.replicas, dtype=float)
        if self.replicas.ndim != self.grid.dim + 1 or self.replicas.shape[0] < 1:
            raise ValueError("replicas must be an array of shape (count,) + grid.shape")

    def __len__(self) -> int:
        return self.replicas.shape[0]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        np.ascontiguousarray(self.replicas, dtype="<f8").tofile(path)
        meta = {"grid": self.grid.to_dict(), "time": self.time, "shape": list(self.replicas.shape),
                "dtype": "float64", "order": "C", "seeds": self.seeds}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "FieldEnsemble":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        arr = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
        return cls(GridSpec.from_dict(meta["grid"]), meta["time"], arr, meta["seeds"])


@dataclass
class Trajectory:
    """A single replica with every state and noise increment kept."""

    cov: CovarianceSpec
    green: GreenSpec
    coeffs: Coefficients
    grid: GridSpec
    states: np.ndarray        # (M + 1,) + grid.shape, u at t_n
    noise: np.ndarray         # (M,) + grid.shape
    seed: int | None = None
    replica: int = 0

    @property
    def steps(self) -> int:
        return self.noise.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.grid.dt

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _steps_for(T: float, dt: float) -> int:
    m = round(T / dt)
    if m < 1 or abs(m * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"T={T} is not an integer multiple of dt={dt}")
    return int(m)


class _Stepper:
    """Advances a batch of replicas by one step."""

    def __init__(self, green, coeffs, grid, workers=None):
        self.grid = grid
        self.coeffs = coeffs
        self.flow = LinearFlow.build(green, grid)
        self.axes = tuple(range(-grid.dim, 0))
        self.workers = workers

    def rfft(self, x):
        return fft.rfftn(x, axes=self.axes, workers=self.workers)

    def irfft(self, x):
        return fft.irfftn(x, s=self.grid.shape, axes=self.axes, workers=self.workers)

    def forcing(self, u, dw):
        out = self.coeffs.sigma.value(u) * dw
        if self.coeffs.drift.name != "zero":
            out = out + self.coeffs.drift.value(u) * self.grid.dt
        return out

    def heat(self, u, dw):
        return self.irfft(self.flow.heat * self.rfft(u + self.forcing(u, dw)))

    def wave(self, uh, vh, u, dw):
        vh = vh + self.rfft(self.forcing(u, dw))
        f = self.flow
        return f.cos * uh + f.sin_over_k * vh, -f.k_sin * uh + f.cos * vh


def _check(u):
    if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > OVERFLOW_GUARD:
        raise UnstableStep("field exceeded the overflow guard; reduce dt")


def _colour_filter(grid, weights):
    return np.sqrt(grid.dt * weights)[..., : grid.points_per_dim // 2 + 1] * grid.points_per_dim ** (grid.dim / 2)


def simulate(cov: CovarianceSpec, green: GreenSpec, coeffs: Coefficients, grid: GridSpec, T: float,
             replicas: int, seed: int, save_times=(), batch: int = 128,
             workers: int | None = None) -> FieldEnsemble | dict:
    """Monte Carlo replicas of u(T, .) from zero initial data.

    Replica ``i`` draws its noise from ``replica_generator(seed, i)``, so the
    result does not depend on ``batch`` or ``workers``.  If ``save_times`` is
    given, returns ``{time: FieldEnsemble}`` including ``T``.
    """
    validate(cov)
    if not (cov.dim == green.dim == grid.dim):
        raise ConfigError("kernel, operator and grid dimensions differ")
    if replicas < 1:
        raise ConfigError("replicas must be at least 1")
    M = _steps_for(T, grid.dt)
    save_steps = {}
    for s in save_times:
        save_steps[_steps_for(s, grid.dt)] = float(s)
    save_steps[M] = float(T)
    if max(save_steps) > M:
        raise ConfigError("save_times must not exceed T")

    weights = spectral_weights(cov, grid)
    filt = _colour_filter(grid, weights)
    st = _Stepper(green, coeffs, grid, workers)
    out = {n: np.empty((replicas,) + grid.shape) for n in save_steps}

    for start in range(0, replicas, batch):
        idx = range(start, min(start + batch, replicas))
        rngs = [replica_generator(seed, i) for i in idx]
        B = len(rngs)
        u = np.zeros((B,) + grid.shape)
        uh = vh = None
        if green.operator == "wave":
            uh = st.rfft(u)
            vh = np.zeros_like(uh)
        if coeffs.is_linear:
            _linear_batch(st, green, coeffs, rngs, M, filt, out, start)
            continue
        n = 0
        while n < M:
            chunk = min(CHUNK_STEPS, M - n)
            white = np.stack([r.standard_normal((chunk,) + grid.shape) for r in rngs], axis=1)
            dws = st.irfft(st.rfft(white) * filt)
            for j in range(chunk):
                dw = dws[j]
                if green.operator == "heat":
                    u = st.heat(u, dw)
                else:
                    uh, vh = st.wave(uh, vh, u, dw)
                    u = st.irfft(uh)
                n += 1
                if n in out:
                    _check(u)
                    out[n][start:start + B] = u
            _check(u)

    seeds = [{"seed": int(seed), "replica": i} for i in range(replicas)]
    ens = {save_steps[n]: FieldEnsemble(grid, save_steps[n], out[n], seeds) for n in sorted(out)}
    if len(save_times) == 0:
        return ens[float(T)]
    return ens


def _linear_batch(st, green, coeffs, rngs, M, filt, out, start):
    """Constant sigma, zero drift: stay in Fourier space between saves."""
    c = float(coeffs.sigma.value(np.zeros(1))[0])
    B = len(rngs)
    shape = st.grid.shape
    uh = np.zeros((B,) + filt.shape, dtype=complex)
    vh = np.zeros_like(uh)
    f = st.flow
    n = 0
    while n < M:
        chunk = min(CHUNK_STEPS, M - n)
        white = np.stack([r.standard_normal((chunk,) + shape) for r in rngs], axis=1)
        kicks = c * st.rfft(white) * filt
        for j in range(chunk):
            if green.operator == "heat":
                uh = f.heat * (uh + kicks[j])
            else:
                vh = vh + kicks[j]
                uh, vh = f.cos * uh + f.sin_over_k * vh, -f.k_sin * uh + f.cos * vh
            n += 1
            if n in out:
                u = st.irfft(uh)
                _check(u)
                out[n][start:start + B] = u


def simulate_path(cov: CovarianceSpec, green: GreenSpec, coeffs: Coefficients, grid: GridSpec,
                  T: float, seed: int, replica: int = 0) -> Trajectory:
    """Single replica with all states and increments kept (same stream as :func:`simulate`)."""
    validate(cov)
    M = _steps_for(T, grid.dt)
    weights = spectral_weights(cov, grid)
    filt = _colour_filter(grid, weights)
    st = _Stepper(green, coeffs, grid)
    rng = replica_generator(seed, replica)
    noise = np.empty((M,) + grid.shape)
    n = 0
    while n < M:
        chunk = min(CHUNK_STEPS, M - n)
        white = rng.standard_normal((chunk, 1) + grid.shape)
        noise[n:n + chunk] = st.irfft(st.rfft(white) * filt)[:, 0]
        n += chunk
    states = run_with_noise(green, coeffs, grid, noise)
    return Trajectory(cov, green, coeffs, grid, states, noise, seed, replica)


def run_with_noise(green: GreenSpec, coeffs: Coefficients, grid: GridSpec, noise: np.ndarray) -> np.ndarray:
    """Deterministic scheme driven by a given set of increments; returns all states."""
    st = _Stepper(green, coeffs, grid)
    M = noise.shape[0]
    states = np.zeros((M + 1,) + grid.shape)
    u = states[0]
    if green.operator == "wave":
        uh = st.rfft(u)
        vh = np.zeros_like(uh)
    for n in range(M):
        if green.operator == "heat":
            u = st.heat(u, noise[n])
        else:
            uh, vh = st.wave(uh, vh, u, noise[n])
            u = st.irfft(uh)
        states[n + 1] = u
    _check(u)
    return states


# -- empirical Hoelder exponents --------------------------------------------

def _moment_fit(lags, moments, p):
    slope, se = fit_slope(zip(lags, moments))
    return slope / p, se / p


def holder_fit(ensembles, direction: str, p: int = 2, lags=None) -> tuple[float, float]:
    """Empirical Hoelder exponent from E|Delta u|^p against the lag.

    ``direction="time"``: ``ensembles`` is a sequence of FieldEnsemble from one
    run; the first is the reference and the others sit at >= 5 distinct lags.
    ``direction="space"``: a single ensemble (or a one-element sequence);
    ``lags`` are integer grid shifts, default 1, 2, 4, ..., N/32.
    Moments average over replicas and grid sites (the law is stationary).
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer")
    if direction == "time":
        ens = list(ensembles)
        if len(ens) < 6:
            raise DegenerateFit("time fit needs a reference and at least 5 lagged ensembles")
        ref = ens[0]
        pairs = []
        for e in ens[1:]:
            lag = abs(e.time - ref.time)
            pairs.append((lag, float(np.mean(np.abs(e.replicas - ref.replicas) ** p))))
        return _moment_fit([q[0] for q in pairs], [q[1] for q in pairs], p)
    if direction == "space":
        ens = ensembles if isinstance(ensembles, FieldEnsemble) else list(ensembles)[0]
        n = ens.grid.points_per_dim
        if lags is None:
            lags = [2 ** j for j in range(int(math.log2(n // 32)) + 1)]
        lags = [int(x) for x in lags]
        if len(lags) < 4:
            raise DegenerateFit("space fit needs at least 4 lags")
        moments = []
        for h in lags:
            acc = 0.0
            for ax in range(1, ens.grid.dim + 1):
                acc += float(np.mean(np.abs(np.roll(ens.replicas, -h, axis=ax) - ens.replicas) ** p))
            moments.append(acc / ens.grid.dim)
        return _moment_fit([h * ens.grid.spacing for h in lags], moments, p)
    raise ValueError("direction must be 'time' or 'space'")


def sup_moment(ens: FieldEnsemble, p: int = 4) -> float:
    """max over grid sites of the empirical E|u|^p."""
    return float(np.max(np.mean(np.abs(ens.replicas) ** p, axis=0)))
