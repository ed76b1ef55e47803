"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Geometry or hyperparameters that the pipeline cannot run with."""


class DimensionError(ValueError):
    """Operand shapes that do not agree."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, component=None, step=None):
        super().__init__(message)
        self.component = component
        self.step = step


class GenerationError(RuntimeError):
    """Synthetic sample generation could not place its objects."""


class IncompatibleError(ValueError):
    """A checkpoint, its config and the data it is applied to disagree."""
