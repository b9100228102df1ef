"""Exception hierarchy shared by every sdbert module.

Each error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class SDBertError(Exception):
    """Base class for all errors raised by the package."""

    exit_code: int = 2


class ConfigError(SDBertError):
    """Invalid configuration value or combination of values."""


class DimensionError(SDBertError):
    """Tensor shapes do not agree."""


class ContractError(SDBertError):
    """A caller broke an operation's precondition."""


class NumericError(SDBertError):
    """A computation produced a non-finite value."""

    exit_code = 3


class DegenerateRowError(NumericError):
    """A softmax row had every position masked out."""


class VocabularyError(SDBertError):
    """Token id outside the model vocabulary."""


class LengthError(SDBertError):
    """Sequence longer than the model's maximum length."""


class DataError(SDBertError):
    """Dataset is empty or otherwise unusable."""


class ParseError(DataError):
    """Malformed line in a TSV file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(SDBertError):
    """Checkpoint file is unreadable or does not match the run."""
