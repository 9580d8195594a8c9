"""
Exception hierarchy shared by every subpackage.

The CLI maps any DualCoTError to exit code 1 with an ``Error: ...`` line
on stderr, so messages are written for a human reading a terminal.
"""

from __future__ import annotations


class DualCoTError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DualCoTError, ValueError):
    """Raised when tensor shapes are incompatible."""


class ContractError(DualCoTError):
    """Raised when a documented pre- or post-condition is violated."""


class NumericError(DualCoTError, ArithmeticError):
    """Raised on non-finite values where finite ones are required."""


class TokenIndexError(DualCoTError, IndexError):
    """Raised when a token id falls outside the vocabulary."""


class ConfigError(DualCoTError):
    """Raised for invalid configuration values or geometry."""


class GenerationError(DualCoTError):
    """Raised when scene sampling cannot satisfy its constraints."""


class InputError(DualCoTError):
    """Raised for malformed model inputs (e.g. overlong instructions)."""


class FormatError(DualCoTError):
    """Raised when a binary or text file does not match its format."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class VocabularyError(DualCoTError):
    """Raised when text contains a word outside the closed vocabulary."""

    def __init__(self, word: str) -> None:
        self.word = word
        super().__init__(f"Word '{word}' is not in the vocabulary.")


class TrainingError(DualCoTError):
    """Raised when training diverges or misses its target."""

    def __init__(self, message: str, step: int | None = None, components: dict[str, float] | None = None) -> None:
        self.step = step
        self.components = components or {}
        if step is not None:
            detail = ", ".join(f"{k}={v:.6g}" for k, v in self.components.items())
            message = f"{message} at step {step}" + (f" ({detail})" if detail else "")
        super().__init__(message)
