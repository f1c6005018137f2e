"""Exception taxonomy shared by all diarkit modules.

The CLI maps these onto exit codes: ConfigError -> 2, everything else
derived from DiarkitError -> 3.
"""


class DiarkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DiarkitError):
    """Invalid configuration value (bad window plan, weight out of range, ...)."""


class DataError(DiarkitError):
    """Input data violates a contract (shape mismatch, bad file payload, ...)."""


class ParseError(DataError):
    """Malformed text input; carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DomainError(DiarkitError):
    """Value outside the mathematical domain of an operation."""
