"""Exception types shared across the library.

Every error raised on a contract violation is an instance of LibraryError so
callers can catch the whole family; subclasses carry enough structure to be
actionable (shapes, config line numbers, tensor names).
"""

from __future__ import annotations


class LibraryError(Exception):
    """Base class for all errors raised by this library."""


class ShapeError(LibraryError):
    """Operands have incompatible or malformed shapes.

    Carries the offending shapes so messages can name both sides.
    """

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class NonFiniteError(LibraryError):
    """A tensor holds NaN or infinity where finite values are required."""


class DomainError(LibraryError):
    """A value violates its contract (non-positive precision, bad variant, ...)."""


class SizeCapError(LibraryError):
    """An instance exceeds a hard size cap meant to keep brute force tractable."""


class GraphError(LibraryError):
    """Misuse of the differentiation tape (unknown op, foreign variable, non-scalar loss)."""


class ConfigError(LibraryError):
    """A config file failed to parse or validate.

    line is 1-based, or None when the error is not tied to a single line.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SerializationError(LibraryError):
    """A tensor byte stream is malformed (bad header or short payload)."""


class CheckpointError(LibraryError):
    """A checkpoint file is malformed, truncated, or does not match the model."""


class TrainingDiverged(LibraryError):
    """The training loss became non-finite. Carries the offending step index."""

    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite loss at training step {step}")
        self.step = step


class TaskError(LibraryError):
    """Invalid task kind or task data (labels out of range, bad mask, ...)."""
