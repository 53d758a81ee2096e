"""Exception types raised by the detectors and helpers."""


class DimensionError(ValueError):
    """Bin counts of two objects that must agree do not."""


class EmptyWindowError(ValueError):
    """A statistic was requested on a window holding zero observations."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class UndefinedPowerError(ValueError):
    """The power bound is undefined because the two distributions coincide."""


class SpectrumParseError(ValueError):
    """A spectrum file could not be parsed.

    ``line`` is the 1-based line number of the offending row, or ``None``
    when the problem concerns the whole file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotFittedError(RuntimeError):
    """A detector was used before ``fit``."""


class DetectorHalted(RuntimeError):
    """``update`` was called on a halt-on-alarm detector that already alarmed."""
