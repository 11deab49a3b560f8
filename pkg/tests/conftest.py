import copy
import json

import pytest

_COV = {"family": "riesz", "dim": 1, "beta": 0.5}
_HEAT = {"operator": "heat", "dim": 1}
_SINE = {"sigma": {"name": "sine", "a": 1.0, "b": 0.5}, "drift": "zero"}
_CONST = {"sigma": {"name": "constant", "c": 1.0}, "drift": "zero"}


def _grid(n, dt, length=8.0):
    return {"dim": 1, "length": length, "points_per_dim": n, "dt": dt}


SMALL_CONFIGS = {
    "exponents": {"seed": 5, "eps": {"k_min": 4, "k_max": 9},
                  "cases": [{"cov": _COV, "green": _HEAT, "kappa1": 0.3, "kappa2": 0.6, "w": [1.0]}]},
    "noise-check": {"seed": 5, "cov": _COV, "grid": _grid(32, 0.01), "replicas": 300, "steps": 4, "pairs": 2},
    "simulate": {"seed": 5, "cov": _COV, "green": _HEAT, "coefficients": _SINE, "grid": _grid(32, 2 ** -6),
                 "T": 0.25, "replicas": 4, "save_times": [0.125]},
    "holder": {"seed": 5, "cov": _COV, "green": _HEAT, "coefficients": _CONST, "grid": _grid(256, 2 ** -8),
               "T": 0.25, "replicas": 20, "time_lags": [1, 2, 4, 8, 16], "space_lags": [1, 2, 4, 8],
               "time_band": [0.0, 2.0], "space_band": [0.0, 2.0]},
    "malliavin": {"seed": 5, "cov": _COV, "green": _HEAT, "coefficients": _SINE, "grid": _grid(64, 2 ** -7),
                  "T": 0.25, "points": [[3.0], [5.0]], "xi": [0.6, 0.8],
                  "eps": [2 ** -3, 2 ** -4, 2 ** -5, 2 ** -6], "replicas": 2, "slope_tolerance": 10.0,
                  "smallball": {"replicas": 500, "delta": [1.0, 0.1]}},
    "density": {"seed": 5, "cov": _COV, "green": _HEAT, "coefficients": _CONST, "grid": _grid(32, 2 ** -6),
                "T": 0.25, "replicas": 500, "points": [[2.0], [6.0]], "oracle": "scheme",
                "oracle_tolerance": 1.0, "lattice": 11},
}


@pytest.fixture
def small_config(tmp_path):
    """Write a small config for ``command`` (optionally patched) and return its path."""
    def make(command, **patch):
        cfg = copy.deepcopy(SMALL_CONFIGS[command])
        cfg.update(patch)
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        return path
    return make
