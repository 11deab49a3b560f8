"""Config-driven command line entry point.

Every subcommand reads one JSON config, writes deterministic report files
into ``--out`` and a separate ``metadata.json`` holding timestamps and the
run environment.  The exit status is 0 when every verdict passes.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, HomSPDEError
from .green import GreenSpec
from .kernels import CovarianceSpec
from .noise import GridSpec

EXIT_CODES = {0: "all verdicts pass", 2: "configuration or parameter error", 3: "quadrature divergence",
              4: "Monte Carlo unstable or solver blow-up", 5: "a verdict failed or another assertion error"}

# -- schemas ----------------------------------------------------------------

_COV = {
    "type": "object",
    "required": ["family", "dim"],
    "properties": {
        "family": {"enum": ["riesz", "bessel", "fractional"]},
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "beta": {"type": "number"},
        "alpha": {"type": "number"},
        "hurst": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3},
    },
    "additionalProperties": False,
}
_GREEN = {
    "type": "object",
    "required": ["operator", "dim"],
    "properties": {"operator": {"enum": ["heat", "wave"]}, "dim": {"type": "integer", "minimum": 1, "maximum": 3}},
    "additionalProperties": False,
}
_GRID = {
    "type": "object",
    "required": ["dim", "length", "points_per_dim", "dt"],
    "properties": {"dim": {"type": "integer", "minimum": 1, "maximum": 3},
                   "length": {"type": "number", "exclusiveMinimum": 0},
                   "points_per_dim": {"type": "integer", "minimum": 8},
                   "dt": {"type": "number", "exclusiveMinimum": 0}},
    "additionalProperties": False,
}
_PRESET = {"oneOf": [{"type": "string"},
                     {"type": "object", "required": ["name"], "properties": {"name": {"type": "string"}},
                      "additionalProperties": {"type": "number"}}]}
_COEFFS = {
    "type": "object",
    "required": ["sigma"],
    "properties": {"sigma": _PRESET, "drift": _PRESET, "sigma_floor": {"type": ["number", "null"]}},
    "additionalProperties": False,
}
_SEED = {"type": "integer", "minimum": 0}
_POINTS = {"type": "array", "minItems": 1, "maxItems": 4,
           "items": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3}}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POSITIVE_LIST = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}


def _obj(required, props):
    return {"type": "object", "required": required, "properties": props, "additionalProperties": False}


SCHEMAS = {
    "exponents": _obj(["seed", "cases"], {
        "seed": _SEED,
        "eps": _obj([], {"k_min": {"type": "integer", "minimum": 1},
                         "k_max": {"type": "integer", "minimum": 2}}),
        "cases": {"type": "array", "minItems": 1, "items": _obj(["cov", "green"], {
            "cov": _COV, "green": _GREEN,
            "kappa1": {"type": "number", "exclusiveMinimum": 0},
            "kappa2": {"type": "number", "exclusiveMinimum": 0},
            "w": _VECTOR})},
    }),
    "noise-check": _obj(["seed", "cov", "grid", "replicas"], {
        "seed": _SEED, "cov": _COV, "grid": _GRID,
        "replicas": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 2},
        "pairs": {"type": "integer", "minimum": 1},
    }),
    "simulate": _obj(["seed", "cov", "green", "coefficients", "grid", "T", "replicas"], {
        "seed": _SEED, "cov": _COV, "green": _GREEN, "coefficients": _COEFFS, "grid": _GRID,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "save_times": _POSITIVE_LIST,
    }),
    "holder": _obj(["seed", "cov", "green", "coefficients", "grid", "T", "replicas"], {
        "seed": _SEED, "cov": _COV, "green": _GREEN, "coefficients": _COEFFS, "grid": _GRID,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "time_lags": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 5},
        "space_lags": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4},
        "p": {"type": "integer", "minimum": 2},
        "space_band": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "time_band": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "max_gap": {"type": "number", "exclusiveMinimum": 0},
    }),
    "malliavin": _obj(["seed", "cov", "green", "coefficients", "grid", "T", "points", "xi", "eps"], {
        "seed": _SEED, "cov": _COV, "green": _GREEN, "coefficients": _COEFFS, "grid": _GRID,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "points": _POINTS, "xi": _VECTOR, "eps": _POSITIVE_LIST,
        "replicas": {"type": "integer", "minimum": 1},
        "kappa1": {"type": "number", "exclusiveMinimum": 0},
        "kappa2": {"type": "number", "exclusiveMinimum": 0},
        "slope_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "ratio_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "smallball": _obj(["replicas", "delta"], {"replicas": {"type": "integer", "minimum": 500},
                                                 "delta": _POSITIVE_LIST}),
    }),
    "density": _obj(["seed", "cov", "green", "coefficients", "grid", "T", "replicas", "points"], {
        "seed": _SEED, "cov": _COV, "green": _GREEN, "coefficients": _COEFFS, "grid": _GRID,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "points": _POINTS,
        "quantile_box": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "oracle": {"enum": ["none", "continuum", "grid", "scheme"]},
        "oracle_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "lattice": {"type": "integer", "minimum": 2},
    }),
}


def load_config(command: str, path: str | Path, seed: int | None = None) -> dict:
    """Read and validate a config; ``seed`` overrides the file's seed."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if seed is not None:
        cfg["seed"] = seed
    validate_config(command, cfg)
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{command} config invalid at {where}: {exc.message}") from None


# -- helpers ----------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _common(cfg):
    from .solver import Coefficients
    cov = CovarianceSpec.from_dict(cfg["cov"])
    green = GreenSpec.from_dict(cfg["green"]) if "green" in cfg else None
    grid = GridSpec.from_dict(cfg["grid"]) if "grid" in cfg else None
    coeffs = Coefficients.from_dict(cfg["coefficients"]) if "coefficients" in cfg else None
    return cov, green, grid, coeffs


def _indices(grid: GridSpec, points) -> list[tuple[int, ...]]:
    from .malliavin import _as_indices
    return _as_indices(grid, [np.asarray(p, dtype=float) for p in points])


# -- subcommands ------------------------------------------------------------

def run_exponents(cfg: dict, out: Path, threads: int | None) -> bool:
    from .scaling import EpsGrid, h3_fit, h4_fit, reports_to_csv
    eps = cfg.get("eps", {})
    grid = EpsGrid.dyadic(eps.get("k_min", 4), eps.get("k_max", 12))
    reports = []
    for case in cfg["cases"]:
        cov = CovarianceSpec.from_dict(case["cov"])
        green = GreenSpec.from_dict(case["green"])
        k1, k2, w = case.get("kappa1"), case.get("kappa2"), case.get("w")
        if w is None:
            w = [1.0] + [0.0] * (cov.dim - 1)
        reports.append(h3_fit(cov, green, grid))
        for kind in ("i", "ii", "iii"):
            reports.append(h4_fit(kind, cov, green, k1, k2, w, grid, seed=cfg["seed"]))
    (out / "exponents.csv").write_text(reports_to_csv(reports))
    return all(r.passed for r in reports)


def run_noise_check(cfg: dict, out: Path, threads: int | None) -> bool:
    from .noise import (autocorrelation_check, isotropy_check, pairing_check, replica_generator,
                        sample_increment, smooth_box, spectral_weights, stationarity_check,
                        variance_check)
    cov, _, grid, _ = _common(cfg)
    seed, reps = cfg["seed"], cfg["replicas"]
    L, c = grid.length, np.full(grid.dim, grid.length / 2)
    hw = [L / 16, L / 8, L / 12, L / 10, L / 20][: cfg.get("pairs", 5)]
    shifts = [0.0, L / 16, L / 8, L / 6, L / 32]
    pairs = []
    for k, (a, s) in enumerate(zip(hw, shifts)):
        d = np.zeros(grid.dim)
        d[0] = s
        pairs.append((smooth_box(grid, c, a), smooth_box(grid, c + d, hw[(k + 1) % len(hw)])))
    pairing = pairing_check(cov, grid, pairs, reps, seed)
    auto = autocorrelation_check(cov, grid, reps, cfg.get("steps", 8), seed + 1)
    var = variance_check(cov, grid, reps, seed + 2)
    weights = spectral_weights(cov, grid)
    fields = np.stack([sample_increment(cov, grid, replica_generator(seed + 3, i), weights).values
                       for i in range(reps)])
    disp = [[1] + [0] * (grid.dim - 1), [2] + [0] * (grid.dim - 1), [4] + [0] * (grid.dim - 1)]
    if grid.dim > 1:
        disp.append([1] * grid.dim)
    stat = stationarity_check(fields, grid, disp, seed=seed)
    iso = isotropy_check(fields, grid, 2)
    report = {"cov": cov.to_dict(), "grid": grid.to_dict(), "replicas": reps, "seed": seed,
              "pairing": pairing, "autocorrelation": auto, "variance": var,
              "stationarity": stat, "isotropy": iso}
    ok = all(p["pass"] for p in pairing) and auto["pass"] and var["pass"] and stat["pass"] and iso["pass"]
    report["pass"] = bool(ok)
    _write_json(out / "noise_check.json", report)
    return ok


def run_simulate(cfg: dict, out: Path, threads: int | None) -> bool:
    from .solver import simulate, sup_moment
    cov, green, grid, coeffs = _common(cfg)
    times = cfg.get("save_times", [])
    res = simulate(cov, green, coeffs, grid, cfg["T"], cfg["replicas"], cfg["seed"],
                   save_times=times, workers=threads)
    ens = res if isinstance(res, dict) else {cfg["T"]: res}
    summary = []
    for t in sorted(ens):
        e = ens[t]
        name = f"ensemble_t{t:.6g}.f8"
        e.save(out / name)
        finite = bool(np.all(np.isfinite(e.replicas)))
        summary.append({"time": t, "file": name, "mean": float(e.replicas.mean()),
                        "variance": float(e.replicas.var()), "sup_moment_4": sup_moment(e, 4),
                        "finite": finite, "pass": finite})
    ok = all(s["pass"] for s in summary)
    _write_json(out / "simulate.json", {"ensembles": summary, "pass": ok})
    return ok


def run_holder(cfg: dict, out: Path, threads: int | None) -> bool:
    from .solver import holder_fit, simulate
    cov, green, grid, coeffs = _common(cfg)
    T = cfg["T"]
    tl = cfg.get("time_lags", [1, 2, 4, 8, 16, 32])
    times = [T] + [T + k * grid.dt for k in tl]
    res = simulate(cov, green, coeffs, grid, times[-1], cfg["replicas"], cfg["seed"],
                   save_times=times, workers=threads)
    ens = [res[t] for t in times]
    p = cfg.get("p", 2)
    k1, se1 = holder_fit(ens, "time", p)
    k2, se2 = holder_fit(ens[0], "space", p, cfg.get("space_lags"))
    report = {"kappa1": k1, "kappa1_stderr": se1, "kappa2": k2, "kappa2_stderr": se2, "p": p}
    ok = True
    if "time_band" in cfg:
        lo, hi = cfg["time_band"]
        report["time_pass"] = bool(lo <= k1 <= hi)
        ok &= report["time_pass"]
    if "space_band" in cfg:
        lo, hi = cfg["space_band"]
        report["space_pass"] = bool(lo <= k2 <= hi)
        ok &= report["space_pass"]
    if "max_gap" in cfg:
        report["gap"] = abs(k1 - k2)
        report["gap_pass"] = bool(abs(k1 - k2) < cfg["max_gap"])
        ok &= report["gap_pass"]
    report["pass"] = bool(ok)
    _write_json(out / "holder.json", report)
    return bool(ok)


def run_malliavin(cfg: dict, out: Path, threads: int | None) -> bool:
    from .malliavin import (decomposition_csv, decomposition_table, dominance_threshold,
                            malliavin_matrix, smallball_csv, smallball_probe)
    from .noise import spectral_weights
    from .scaling import expected_exponents, fit_slope, g_eps
    from .solver import simulate_path
    cov, green, grid, coeffs = _common(cfg)
    pts = _indices(grid, cfg["points"])
    xi = np.asarray(cfg["xi"], dtype=float)
    if xi.shape != (len(pts),):
        raise ConfigError("xi must have one entry per point")
    xi = xi / np.linalg.norm(xi)
    eps = sorted(cfg["eps"], reverse=True)
    weights = spectral_weights(cov, grid)
    reps = cfg.get("replicas", 1)
    tables, psd = [], True
    for i in range(reps):
        traj = simulate_path(cov, green, coeffs, grid, cfg["T"], cfg["seed"], i)
        tables.append(decomposition_table(traj, cov, pts, xi, eps, weights))
        psd &= malliavin_matrix(traj, pts, weights).is_psd()
    names = ("a11", "a12", "a13", "a2")
    mean_rows = []
    for k, e in enumerate(eps):
        row = {n: float(np.mean([abs(getattr(t[k], n)) for t in tables])) for n in names}
        mean_rows.append(type(tables[0][0])(e, **row))
    (out / "decomposition.csv").write_text(decomposition_csv(mean_rows))
    exps = expected_exponents(cov, green, cfg.get("kappa1"), cfg.get("kappa2"))
    slopes = {}
    for n in names:
        vals = [getattr(r, n) for r in mean_rows]
        slopes[n] = fit_slope(zip(eps, vals))[0] if len(eps) >= 4 and min(vals) > 0 else None
    tol = cfg.get("slope_tolerance", 0.1)
    verdicts = {"psd": bool(psd), "dominance_threshold": dominance_threshold(mean_rows)}
    verdicts["dominance_pass"] = verdicts["dominance_threshold"] is not None
    ratio = [r.a11 / g_eps(cov, green, r.eps, _allow_large=True) for r in mean_rows]
    spread = float(np.max(np.abs(np.asarray(ratio) / np.median(ratio) - 1.0)))
    verdicts["a11_ratio_pass"] = bool(spread <= cfg.get("ratio_tolerance", 0.1))
    if len(pts) > 1 and slopes["a12"] is not None:
        verdicts["a12_pass"] = bool(abs(slopes["a12"] - exps["eta2"]) <= tol)
    if slopes["a13"] is not None:
        verdicts["a13_pass"] = bool(abs(slopes["a13"] - min(exps["eta1"], exps["eta3"])) <= tol)
    report = {"expected": exps, "slopes": slopes, "verdicts": verdicts, "replicas": reps,
              "a11_over_g": {"eps": eps, "ratio": ratio, "max_relative_spread": spread}}
    if "smallball" in cfg:
        sb = cfg["smallball"]
        mats = [malliavin_matrix(simulate_path(cov, green, coeffs, grid, cfg["T"], cfg["seed"] + 1, i),
                                 pts, weights) for i in range(sb["replicas"])]
        verdicts["smallball_psd"] = all(m.is_psd() for m in mats)
        probe = smallball_probe(mats, sorted(sb["delta"], reverse=True), cov, green,
                                cfg.get("kappa1"), cfg.get("kappa2"))
        (out / "smallball.csv").write_text(smallball_csv(probe))
        report["smallball"] = {k: probe[k] for k in ("lambda", "det_min", "det_median")}
    ok = all(v for k, v in verdicts.items() if k.endswith("pass") or k.endswith("psd"))
    report["pass"] = bool(ok)
    _write_json(out / "malliavin.json", report)
    return bool(ok)


def run_density(cfg: dict, out: Path, threads: int | None) -> bool:
    from .density import gaussian_oracle, kde_joint, lattice_csv, oracle_distance, positivity_report
    from .solver import simulate
    cov, green, grid, coeffs = _common(cfg)
    pts = _indices(grid, cfg["points"])
    ens = simulate(cov, green, coeffs, grid, cfg["T"], cfg["replicas"], cfg["seed"], workers=threads)
    est = kde_joint(ens, pts)
    pos = positivity_report(est, cfg.get("quantile_box", 0.1))
    report = {"points": [list(p) for p in pts], "bandwidth": est.bandwidth, "positivity": pos}
    ok = pos["pass"]
    variant = cfg.get("oracle", "none")
    if variant != "none":
        if not coeffs.is_linear or coeffs.drift.name != "zero":
            raise ConfigError("the Gaussian oracle needs constant sigma and zero drift")
        c = float(coeffs.sigma.value(np.zeros(1))[0])
        xs = [np.asarray(p) * grid.spacing for p in pts]
        oracle = gaussian_oracle(cov, green, cfg["T"], xs, c, variant, grid)
        dist = oracle_distance(est, oracle)
        dist["pass"] = bool(dist["relative"] < cfg.get("oracle_tolerance", 0.1))
        report["oracle"] = {"variant": variant, "covariance": oracle.cov, **dist}
        ok = ok and dist["pass"]
    lo, hi = pos["box"]["lo"], pos["box"]["hi"]
    (out / "density_lattice.csv").write_text(lattice_csv(est, lo, hi, cfg.get("lattice", 21)))
    report["pass"] = bool(ok)
    _write_json(out / "density.json", report)
    return bool(ok)


COMMANDS = {"exponents": run_exponents, "noise-check": run_noise_check, "simulate": run_simulate,
            "holder": run_holder, "malliavin": run_malliavin, "density": run_density}


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    codes = "\n".join(f"  {k}  {v}" for k, v in EXIT_CODES.items())
    parser = argparse.ArgumentParser(
        prog="homspde", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Scaling exponents, simulation and density diagnostics for SPDEs "
                    "driven by spatially homogeneous Gaussian noise.",
        epilog=f"exit codes:\n{codes}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, formatter_class=argparse.RawDescriptionHelpFormatter,
                           epilog=f"exit codes:\n{codes}")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="FFT worker threads")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def run(command: str, config: str | Path, out: str | Path, threads: int | None = None,
        seed: int | None = None) -> int:
    """Execute one subcommand; returns the exit status."""
    out = Path(out)
    started = time.time()
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = load_config(command, config, seed)
        ok = COMMANDS[command](cfg, out, threads)
        status, error = (0 if ok else 5), None
    except HomSPDEError as exc:
        status, error = exc.exit_code, f"{type(exc).__name__}: {exc}"
    except AssertionError as exc:
        status, error = 5, f"AssertionError: {exc}"
    except np.linalg.LinAlgError as exc:
        status, error = 5, f"LinAlgError: {exc}"
    except ValueError as exc:
        # inputs that pass the schema but violate a module precondition
        status, error = 2, f"{type(exc).__name__}: {exc}"
    if out.is_dir():
        meta = {"command": command, "config": str(config), "started": started,
                "elapsed_seconds": time.time() - started, "exit_status": status, "error": error,
                "version": __version__, "python": platform.python_version(), "numpy": np.__version__}
        _write_json(out / "metadata.json", meta)
    if error:
        print(error, file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
