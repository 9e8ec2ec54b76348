"""Exception hierarchy shared by every module."""


class VarembedError(Exception):
    """Base class for all package errors."""


class NonSymmetricError(VarembedError, ValueError):
    pass


class RankDeficientError(VarembedError, ValueError):
    """Jacobian (or Gram matrix) is too close to losing full column rank."""

    def __init__(self, message, condition=None, min_eigenvalue=None):
        super().__init__(message)
        self.condition = condition
        self.min_eigenvalue = min_eigenvalue


class NotTraceableError(VarembedError, ValueError):
    """Requested derivative of a value that was not recorded from the parameters."""


class IterateInvalid(VarembedError):
    """The objective cannot be evaluated at the current parameters.

    Raised for rank-deficient Jacobians or underflowing log-densities at any
    integration node; optimizers respond by shrinking the step.
    """


class DegenerateSpectrumError(VarembedError, ValueError):
    pass


class TurningPoint(VarembedError):
    """Momentum vanished while integrating the 1D Euler-Lagrange dynamics."""


class CriticalPointError(VarembedError, ValueError):
    """Score vanishes, so the score-following direction is undefined."""


class ConfigError(VarembedError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class OptimizationFailed(VarembedError):
    def __init__(self, message, causes=()):
        super().__init__(message)
        self.causes = list(causes)
