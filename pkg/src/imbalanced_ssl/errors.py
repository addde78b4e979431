class ConfigError(ValueError):
    """Invalid configuration values."""


class DatasetFormatError(ValueError):
    """A persisted dataset or feature map is malformed or fails its integrity check."""


class InfeasibleError(RuntimeError):
    """The labeled data cannot be separated with a positive multiclass margin."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonFiniteError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
