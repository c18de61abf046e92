"""
Exception hierarchy for the SkyTrack tracking engine.
Every error carries the exit code the command-line surface reports for it.
"""

from pathlib import Path
from typing import Union


class TrackingError(Exception):
    """Base class for all errors raised by the engine."""
    exit_code = 1


class ConfigError(TrackingError, ValueError):
    """Invalid configuration key or value."""
    exit_code = 2


class DataIOError(TrackingError, OSError):
    """A file could not be found, read or written."""
    exit_code = 3


class InputValidationError(TrackingError, ValueError):
    """Input data violates a format or domain rule."""
    exit_code = 4


class MotFormatError(InputValidationError):
    """Malformed line in a MOT text file."""

    def __init__(self, path: Union[str, Path], line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class FrameOrderError(InputValidationError):
    """Frame index went backwards or a batch mixed frames."""


class GeometryError(InputValidationError):
    """Invalid box geometry or ROI mismatch."""


class MotionError(InputValidationError):
    """Kalman filter received a non-finite measurement."""


class FlagConflictError(InputValidationError):
    """Contradictory command-line flags."""


class AssignmentError(TrackingError):
    """The assignment solver could not produce an optimal matching."""
