"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so the CLI can
map them to distinct exit codes.
"""


class EulalignError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(EulalignError, ValueError):
    """Invalid or inconsistent configuration."""


class UnsupportedError(ConfigError):
    """A valid request that this code deliberately does not handle."""


class SizeError(ConfigError):
    """Input too large for an exhaustive routine."""


class AlignmentError(ConfigError):
    """Two trajectories do not share a snapshot grid."""


class NumericalError(EulalignError, ArithmeticError):
    """Base class for failures detected while computing."""


class SingularityError(NumericalError):
    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class DivergenceError(NumericalError):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class ContractionError(NumericalError):
    """Damping too weak for the velocity fixed-point map to contract."""


class IterationLimitError(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
