"""Exception hierarchy shared by all modules."""


class HomSPDEError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 5


class ParameterError(HomSPDEError, ValueError):
    """A parameter falls outside its admissible range."""

    exit_code = 2

    def __init__(self, constraint: str):
        super().__init__(constraint)
        self.constraint = constraint


class SingularPoint(HomSPDEError, ValueError):
    """Evaluation requested at a singularity of a kernel or density."""


class QuadratureDivergence(HomSPDEError, ArithmeticError):
    """A quadrature did not stabilize under refinement."""

    exit_code = 3


class DegenerateFit(HomSPDEError, ValueError):
    """A regression cannot be carried out with the data supplied."""


class ZeroShift(HomSPDEError, ValueError):
    """A shifted inner product was requested with a zero shift."""

    exit_code = 2


class MonteCarloUnstable(HomSPDEError, ArithmeticError):
    """A Monte Carlo estimate has relative standard error above threshold."""

    exit_code = 4


class KappaOutOfRange(HomSPDEError, ValueError):
    """Requested Hölder exponents exceed the admissible range."""

    exit_code = 2


class UnstableStep(HomSPDEError, ArithmeticError):
    """The time stepper produced a non-finite or overflowing field."""

    exit_code = 4


class TimeNotSaved(HomSPDEError, KeyError):
    """A derivative time is not on the recorded time grid."""


class SingularCovariance(HomSPDEError, ArithmeticError):
    """A covariance matrix is numerically singular."""


class InsufficientReplicas(HomSPDEError, ValueError):
    """Too few Monte Carlo replicas for the requested estimate."""

    exit_code = 2


class ConfigError(HomSPDEError, ValueError):
    """An experiment configuration failed schema validation."""

    exit_code = 2
