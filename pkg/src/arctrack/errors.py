"""Exception taxonomy shared by all toolkit modules."""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class DegenerateBox(ToolkitError):
    """Box with zero area, coincident diagonal endpoints, or beta outside (0, 1)."""


class NotARectangle(ToolkitError):
    """Four corners whose diagonals do not bisect each other with equal length."""


class ShapeError(ToolkitError):
    """Tensor operands with incompatible shapes."""


class TapeCorruption(ToolkitError):
    """Recorded forward pass no longer reproduces its stored outputs."""


class ParseError(ToolkitError):
    """Malformed text input. Carries a 1-based line number when available."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySequence(ToolkitError):
    """Sequence with no frames."""


class MissingAnnotation(ToolkitError):
    """Frame without a ground-truth box where one is required."""


class NoValidFrames(ToolkitError):
    """Accuracy requested but no frame has tracked status."""


class InvalidInterval(ToolkitError):
    """Averaging interval with lo > hi or bounds below 1."""


class DatasetMismatch(ToolkitError):
    """Predictions and ground truth disagree on sequence identity or length."""


class ConfigError(ToolkitError):
    """Configuration value outside its documented domain, or unknown key."""


class NotInitialized(ToolkitError):
    """Tracker step requested before initialization."""
