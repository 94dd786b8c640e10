"""Exception types raised across the package."""


class HarmoniDiffError(Exception):
    """Base class for all package errors."""


class ContractError(HarmoniDiffError, ValueError):
    """An argument violates a documented precondition."""


class ImageFormatError(HarmoniDiffError, ValueError):
    """Unsupported image format or bit depth."""


class PlacementError(HarmoniDiffError, ValueError):
    """The (rescaled) source does not fit inside the target."""


class ConvergenceError(HarmoniDiffError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class MetricUndefinedError(HarmoniDiffError, ValueError):
    """A metric cannot be evaluated, e.g. because a boundary ring is empty."""


class NumericError(HarmoniDiffError, ArithmeticError):
    """Numerical failure such as a matrix square root of an indefinite product."""

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition number ~{condition:.3e})"
        super().__init__(message)
        self.condition = condition


class ScorerFormatError(HarmoniDiffError, ValueError):
    """A serialized scorer document is malformed or has the wrong version."""


class ConfigError(HarmoniDiffError, ValueError):
    """Invalid configuration document."""


class ManifestError(HarmoniDiffError, ValueError):
    """Invalid manifest document; ``field`` names the offending key when known."""

    def __init__(self, message, field=None, index=None):
        super().__init__(message)
        self.field = field
        self.index = index
