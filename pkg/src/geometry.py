"""
Geometry Module - Frame transforms and per-segment primitives.
Headings are degrees measured clockwise from the +y axis, normalized to [0, 360).
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Tuple, Union

import numpy as np

from src.errors import DegenerateTrajectory, StationarySegment


STATIONARY_EPSILON = 1e-6
DEFAULT_DT = 0.5
ORIGIN_TOLERANCE = 1e-9


def normalize_deg(value: float) -> float:
    """Wrap an angle in degrees into [0, 360)."""
    wrapped = float(value) % 360.0
    # -1e-17 % 360 rounds to 360.0
    return 0.0 if wrapped >= 360.0 else wrapped


def normalize_deg_array(values: np.ndarray) -> np.ndarray:
    """Vectorized normalize_deg."""
    wrapped = np.mod(np.asarray(values, dtype=float), 360.0)
    return np.where(wrapped >= 360.0, 0.0, wrapped)


@dataclass(frozen=True)
class Point2:
    """A point in meters. In the local frame x is lateral (right) and y is forward."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point2 coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class AngleDeg:
    """An angle in degrees, always stored in [0, 360)."""
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"AngleDeg must be finite, got {self.value}")
        object.__setattr__(self, "value", normalize_deg(self.value))

    @property
    def radians(self) -> float:
        return math.radians(self.value)


AngleLike = Union[AngleDeg, float, int]


def _deg(theta: AngleLike) -> float:
    return theta.value if isinstance(theta, AngleDeg) else normalize_deg(theta)


@dataclass(frozen=True)
class Pose:
    """Agent pose in the global frame: position plus initial yaw."""
    position: Point2 = field(default_factory=lambda: Point2(0.0, 0.0))
    heading: AngleDeg = field(default_factory=lambda: AngleDeg(0.0))

    @classmethod
    def from_values(cls, x: float, y: float, heading_deg: float) -> "Pose":
        return cls(Point2(float(x), float(y)), AngleDeg(float(heading_deg)))

    def rotation_matrix(self) -> np.ndarray:
        """
        Matrix taking local vectors to global vectors.

        A local direction at heading phi maps to global heading phi + pose.heading,
        so a local (x, y) becomes (x cos h + y sin h, -x sin h + y cos h).
        """
        h = self.heading.radians
        c, s = math.cos(h), math.sin(h)
        return np.array([[c, s], [-s, c]], dtype=float)

    def to_global_points(self, local_points: np.ndarray) -> np.ndarray:
        local = np.asarray(local_points, dtype=float)
        return local @ self.rotation_matrix().T + self.position.as_array()

    def to_local_points(self, global_points: np.ndarray) -> np.ndarray:
        offset = np.asarray(global_points, dtype=float) - self.position.as_array()
        return offset @ self.rotation_matrix()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Ordered local-frame points at fixed time steps.

    Index 0 is the current position and sits at the local origin.
    The points array is read-only.
    """
    points: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"Trajectory points must have shape (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise DegenerateTrajectory(f"Trajectory needs at least 2 points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("Trajectory points must be finite")
        if np.any(np.abs(pts[0]) > ORIGIN_TOLERANCE):
            raise ValueError(f"Trajectory must start at the local origin, got {pts[0].tolist()}")
        if not self.dt > 0:
            raise ValueError(f"Trajectory dt must be positive, got {self.dt}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: Iterable[Union[Point2, Tuple[float, float]]], dt: float = DEFAULT_DT) -> "Trajectory":
        rows = [(p.x, p.y) if isinstance(p, Point2) else (float(p[0]), float(p[1])) for p in points]
        return cls(np.array(rows, dtype=float).reshape(-1, 2), dt)

    @property
    def num_segments(self) -> int:
        return self.points.shape[0] - 1

    def __len__(self) -> int:
        return self.points.shape[0]

    def point(self, index: int) -> Point2:
        return Point2(float(self.points[index, 0]), float(self.points[index, 1]))

    def truncated(self, horizon_steps: int) -> "Trajectory":
        """Keep the current position and at most horizon_steps predicted points."""
        if horizon_steps + 1 >= len(self):
            return self
        return Trajectory(self.points[: horizon_steps + 1], self.dt)


def midpoint(a: Point2, b: Point2) -> Point2:
    """Point halfway between a and b; the raster is sampled here for the segment a -> b."""
    return Point2((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)


def segment_heading(a: Point2, b: Point2, epsilon: float = STATIONARY_EPSILON) -> AngleDeg:
    """
    Heading of the segment a -> b, clockwise from +y.

    Raises:
        StationarySegment: if the points are closer than epsilon
    """
    dx, dy = b.x - a.x, b.y - a.y
    if math.hypot(dx, dy) < epsilon:
        raise StationarySegment(f"Segment ({a.x}, {a.y}) -> ({b.x}, {b.y}) is shorter than {epsilon} m")
    return AngleDeg(math.degrees(math.atan2(dx, dy)))


def to_global(theta_local: AngleLike, pose: Pose) -> AngleDeg:
    """
    Rotate a heading from the ego frame into the global frame.

    Args:
        theta_local: Heading in degrees, clockwise from the ego +y axis
        pose: Ego pose whose heading is added

    Returns:
        Global heading normalized to [0, 360)
    """
    return AngleDeg(_deg(theta_local) + pose.heading.value)


def angular_difference(theta: AngleLike, theta_nl: AngleLike) -> float:
    """Smallest absolute circular difference in degrees, in [0, 180]."""
    diff = abs(_deg(theta) - _deg(theta_nl)) % 360.0
    return min(diff, 360.0 - diff)


def clip_threshold(delta: float, alpha: float) -> float:
    """Hard gate: deviations up to alpha are legal and count as zero."""
    return 0.0 if delta <= alpha else delta


# Vectorized kernels used by the metric and loss code paths.

def segment_midpoints(points: np.ndarray) -> np.ndarray:
    """(n+1, 2) points -> (n, 2) midpoints."""
    return (points[:-1] + points[1:]) / 2.0


def segment_vectors(points: np.ndarray) -> np.ndarray:
    return points[1:] - points[:-1]


def segment_headings_deg(points: np.ndarray, epsilon: float = STATIONARY_EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """
    Headings of consecutive segments plus a stationary mask.

    Returns:
        Tuple of (headings in [0, 360), boolean mask of stationary segments)
    """
    deltas = segment_vectors(points)
    stationary = np.hypot(deltas[:, 0], deltas[:, 1]) < epsilon
    headings = normalize_deg_array(np.degrees(np.arctan2(deltas[:, 0], deltas[:, 1])))
    return headings, stationary


def signed_residual_deg(theta: np.ndarray, theta_nl: np.ndarray) -> np.ndarray:
    """theta - theta_nl wrapped into [-180, 180)."""
    return np.mod(np.asarray(theta, dtype=float) - np.asarray(theta_nl, dtype=float) + 180.0, 360.0) - 180.0


def angular_difference_array(theta: np.ndarray, theta_nl: np.ndarray) -> np.ndarray:
    """Elementwise angular_difference."""
    diff = np.mod(np.abs(np.asarray(theta, dtype=float) - np.asarray(theta_nl, dtype=float)), 360.0)
    return np.minimum(diff, 360.0 - diff)
