"""Half-line quadrature helpers used by the radial reductions."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import QuadratureDivergence

EPSREL = 1e-10
LIMIT = 400


def _quad(fn, a, b, epsrel=EPSREL, epsabs=0.0, **kw):
    out = integrate.quad(fn, a, b, epsabs=epsabs, epsrel=epsrel, limit=LIMIT, full_output=1, **kw)
    val, err = out[0], out[1]
    if not np.isfinite(val):
        raise QuadratureDivergence(f"non-finite quadrature value on [{a}, {b}]")
    if len(out) > 3 and abs(err) > max(1e-6 * abs(val), 10 * epsabs, 1e-300):
        raise QuadratureDivergence(f"quadrature did not converge on [{a}, {b}]: {out[3][:80]}")
    return val


def log_head(fn: Callable[[float], float], split: float) -> float:
    """int_0^split fn(s) ds via s = split e^(-y), which tames power laws at 0."""

    def g(y):
        s = split * math.exp(-y)
        if s < 1e-280:
            return 0.0
        return fn(s) * s

    return _quad(g, 0.0, np.inf)


def half_line(head: Callable[[float], float], split: float,
              smooth_tail: Callable[[float], float] | None = None,
              osc_tail: Callable[[float], float] | None = None,
              osc_weight: str = "sin", omega: float = 0.0) -> float:
    """int_0^inf of a function split at ``split``.

    On [split, inf) the integrand is ``smooth_tail(s) + osc_tail(s) w(omega s)``
    with ``w`` = sin or cos, integrated by QAGI and QAWF respectively.
    """
    total = log_head(head, split)
    # tails are integrated in u = s / split so that QAGI and QAWF see unit scale
    if smooth_tail is not None:
        total += split * _quad(lambda u: smooth_tail(split * u), 1.0, np.inf)
    if osc_tail is not None:
        # QAWF works with an absolute tolerance only
        tol = max(1e-11 * abs(total) / split, 1e-300)
        total += split * _quad(lambda u: osc_tail(split * u), 1.0, np.inf, epsabs=tol,
                               weight=osc_weight, wvar=omega * split)
    return total


def check_shells(envelope: Callable[[float], float], scale: float, depth: int = 24) -> None:
    """Raise QuadratureDivergence if dyadic shell masses of ``envelope`` fail to decay.

    Shells ``[scale 2^k, scale 2^(k+1)]`` are probed far out (k = depth, ...)
    and close to the origin (k = -depth, ...).  An integrable power law has
    geometrically shrinking shell masses in both directions.
    """

    def shell(k):
        a = scale * 2.0 ** k
        return integrate.quad(envelope, a, 2 * a, epsrel=1e-8, limit=100)[0]

    far = [shell(depth + j) for j in range(3)]
    near = [shell(-depth - j) for j in range(3)]
    for seq, where in ((far, "infinity"), (near, "the origin")):
        if not all(np.isfinite(seq)):
            raise QuadratureDivergence(f"non-finite shell mass near {where}")
        if seq[0] > 0 and (seq[1] >= 0.999 * seq[0] or seq[2] >= 0.999 * seq[1]):
            raise QuadratureDivergence(f"shell masses do not decay near {where}: {seq}")
