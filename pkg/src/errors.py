"""
Errors Module - Signals raised by the OffYaw Engine.
Every error is a ValueError so callers that only care about bad input can catch that.
"""

from typing import Optional


class OffYawError(ValueError):
    """Base class for every domain error in the engine."""


class StationarySegment(OffYawError):
    """Two consecutive trajectory points are closer than the stationary epsilon."""


class EmptyScene(OffYawError):
    """A scene (or index) has no lane points to query."""


class InvalidSpec(OffYawError):
    """A synthetic scene or raster specification cannot be realized."""


class IntersectionSentinel(OffYawError):
    """Raster value 0 marks an intersection and carries no heading."""


class DegenerateTrajectory(OffYawError):
    """A trajectory has fewer than two points."""


class EmptyBatch(OffYawError):
    """A batch-level metric was asked for over zero samples."""


class MissingDrivableArea(OffYawError):
    """Off-road rate needs at least one drivable region in the scene."""


class BatchShapeMismatch(OffYawError):
    """Aligned batch inputs have different lengths."""


class DivergedRefinement(OffYawError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, step: int, message: Optional[str] = None):
        self.step = step
        super().__init__(message or f"Refinement diverged at step {step}")


class InputFormatError(OffYawError):
    """An input file is malformed. Line and column are set for JSON syntax errors."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        location = f"{path}:{line}:{column}" if line is not None else path
        super().__init__(f"{location}: {message}")
