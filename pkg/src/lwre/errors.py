"""Exception types shared across the package."""


class LwreError(Exception):
    """Base class for all package errors."""


class DomainError(LwreError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigurationError(LwreError, ValueError):
    """A network, grid or model configuration is inconsistent."""


class UncertaintySetError(LwreError, ValueError):
    """An uncertainty set is empty or malformed."""


class ModelError(LwreError, ValueError):
    """A MILP model is malformed (unknown variables, empty model, ...)."""


class MpsParseError(LwreError, ValueError):
    """Raised when an MPS file cannot be parsed; carries the line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
