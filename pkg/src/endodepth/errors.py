"""Exception types shared across the package."""


class EndoDepthError(Exception):
    """Base class for all package errors."""


class DomainError(EndoDepthError, ValueError):
    """An input lies outside the domain where an operation is defined."""


class NumericalError(EndoDepthError, ArithmeticError):
    """An iterative routine failed to converge."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class CalibrationError(EndoDepthError):
    """Photometric calibration could not produce a model."""


class DivergenceError(EndoDepthError):
    """The depth solver produced a non-finite energy."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class FormatError(EndoDepthError, ValueError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}" if path is not None else ""
        if line is not None:
            where += f" line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
