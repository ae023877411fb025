"""Error taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see ``abraham.cli``): bad
parameters/config -> 2, solver divergence -> 3, accuracy failures -> 4.
"""


class AbrahamError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(AbrahamError, ValueError):
    """A parameter is outside its admissible range (bad radius, |v| >= 1, ...)."""


class ConfigError(InvalidParameterError):
    """A run configuration could not be parsed or validated."""


class HorizonError(ConfigError):
    """A grid run was requested past its no-contamination horizon."""


class SingularityError(InvalidParameterError):
    """Evaluation requested at a singular point of a kernel."""


class DivergenceError(AbrahamError, RuntimeError):
    """An iteration stopped contracting or exceeded its iteration budget."""


class StabilityError(DivergenceError):
    """The particle speed approached the velocity cap during a run."""


class AccuracyError(AbrahamError, ArithmeticError):
    """A quadrature error estimate exceeded the requested tolerance."""
