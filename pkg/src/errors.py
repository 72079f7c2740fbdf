"""Exception hierarchy shared by every module."""

from typing import Optional


class ChantrackError(Exception):
    """Base class for all workbench errors."""


class DimensionError(ChantrackError, ValueError):
    """Operand shapes do not fit together."""


class DomainError(ChantrackError, ValueError):
    """Input lies outside the domain of an operation."""


class FormatError(ChantrackError):
    """Malformed binary file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericalError(ChantrackError, ArithmeticError):
    """Decomposition failure or non-finite result."""


class TrainingError(ChantrackError):
    """Training diverged or violated a contract."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class TapeError(ChantrackError):
    """Backward pass called with a tape from another forward pass."""


class ConfigError(ChantrackError):
    """Invalid or unreadable experiment configuration."""


class StageError(ChantrackError):
    """An experiment stage failed; wraps the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class UsageError(ChantrackError):
    """Bad command-line usage."""
