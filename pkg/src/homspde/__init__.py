"""Numerical toolkit for SPDEs driven by spatially homogeneous Gaussian noise.

Submodules
----------
kernels    covariance families and their spectral densities
green      heat and wave fundamental solutions
scaling    small-time energy integrals and exponent fits
noise      spectral sampling of coloured noise on a periodic grid
solver     exponential Euler / trigonometric integrators
malliavin  pathwise Malliavin derivative, Gram matrix, decomposition
density    Gaussian oracle, joint KDE, positivity checks
cli        config-driven entry point
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .green import GreenSpec  # noqa: F401
from .kernels import CovarianceSpec  # noqa: F401
from .noise import GridSpec  # noqa: F401
