"""Exception types raised across the package."""


class AdaproxError(Exception):
    """Base class for package errors."""


class EstimateStateError(AdaproxError, RuntimeError):
    """A gradient estimate lacks what the requested statistic needs."""


class DegenerateDataError(AdaproxError, ValueError):
    """Data that makes a quantity undefined, e.g. an all-zero feature matrix."""


class DegenerateStepError(AdaproxError, ZeroDivisionError):
    """A batch-size rule was asked to divide by a zero step or zero model decrease."""


class UnsupportedError(AdaproxError, NotImplementedError):
    """The operation is not available for this problem or size."""


class NumericalFailure(AdaproxError, ArithmeticError):
    """Non-finite values appeared during a run."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ReferenceDivergence(NumericalFailure):
    """The deterministic reference run kept increasing the objective."""


class LibsvmParseError(AdaproxError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedLabelError(AdaproxError, ValueError):
    def __init__(self, labels):
        self.labels = sorted(labels)
        super().__init__(f"labels cannot be mapped to a binary task: {self.labels}")


class ConfigError(AdaproxError, ValueError):
    """Invalid experiment or solver configuration."""
