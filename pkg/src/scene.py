"""
Scene Module - Vector road scenes and brute-force queries.
Lanes are polylines with stored per-point headings; regions are simple polygons.
The linear-scan nearest-lane query here is the reference every faster path is checked against.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.errors import EmptyScene, InvalidSpec
from src.geometry import AngleDeg, Point2, Pose, normalize_deg_array


logger = logging.getLogger(__name__)

DEFAULT_MAX_SPACING = 1.0
BOUNDARY_TOLERANCE = 1e-9
ORACLE_CHUNK = 4096


class RegionKind(str, Enum):
    INTERSECTION = "intersection"
    DRIVABLE = "drivable"


@dataclass(frozen=True, eq=False)
class LanePolyline:
    """A lane as ordered global points with the legal direction of travel at each point."""
    id: str
    points: np.ndarray
    headings: np.ndarray
    max_spacing: float = DEFAULT_MAX_SPACING

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        hdg = normalize_deg_array(np.array(self.headings, dtype=float).reshape(-1))
        if pts.shape[0] < 2:
            raise ValueError(f"Lane {self.id!r} needs at least 2 points, got {pts.shape[0]}")
        if hdg.shape[0] != pts.shape[0]:
            raise ValueError(f"Lane {self.id!r} has {pts.shape[0]} points but {hdg.shape[0]} headings")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(hdg))):
            raise ValueError(f"Lane {self.id!r} has non-finite values")
        gaps = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(gaps > self.max_spacing + BOUNDARY_TOLERANCE):
            raise ValueError(
                f"Lane {self.id!r} point spacing {gaps.max():.3f} m exceeds {self.max_spacing} m"
            )
        pts.setflags(write=False)
        hdg.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "headings", hdg)


def _segments_intersect(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Segment a-b against many segments c-d; touching counts as intersecting."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    def on_segment(p, q, r):
        return (
            (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0]) & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
            & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1]) & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
        )

    a = np.broadcast_to(a, c.shape)
    b = np.broadcast_to(b, c.shape)
    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)
    touching = (
        ((o1 == 0) & on_segment(a, b, c)) | ((o2 == 0) & on_segment(a, b, d))
        | ((o3 == 0) & on_segment(c, d, a)) | ((o4 == 0) & on_segment(c, d, b))
    )
    return proper | touching


def is_simple_polygon(vertices: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed ring touch."""
    k = vertices.shape[0]
    starts = vertices
    ends = np.roll(vertices, -1, axis=0)
    for i in range(k):
        # Edges i-1, i, i+1 share endpoints with edge i.
        others = [j for j in range(k) if j not in (i, (i - 1) % k, (i + 1) % k)]
        if not others:
            continue
        hits = _segments_intersect(starts[i], ends[i], starts[others], ends[others])
        if np.any(hits):
            return False
    return True


@dataclass(frozen=True, eq=False)
class PolygonRegion:
    """A simple closed polygon in the global frame."""
    vertices: np.ndarray
    kind: RegionKind

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if verts.shape[0] < 3:
            raise ValueError(f"Polygon needs at least 3 vertices, got {verts.shape[0]}")
        if not np.all(np.isfinite(verts)):
            raise ValueError("Polygon vertices must be finite")
        if not is_simple_polygon(verts):
            raise ValueError("Polygon edges must not cross")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "kind", RegionKind(self.kind))


def polygon_contains(vertices: np.ndarray, points: np.ndarray, tolerance: float = BOUNDARY_TOLERANCE) -> np.ndarray:
    """
    Even-odd point-in-polygon test where the boundary counts as inside.

    Args:
        vertices: (k, 2) polygon vertices in order (either orientation)
        points: (N, 2) query points

    Returns:
        (N,) boolean array
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(pts.shape[0], dtype=bool)
    on_edge = np.zeros(pts.shape[0], dtype=bool)
    k = vertices.shape[0]
    for i in range(k):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % k]
        ex, ey = bx - ax, by - ay
        length = math.hypot(ex, ey)
        cross = ex * (py - ay) - ey * (px - ax)
        within = (
            (px >= min(ax, bx) - tolerance) & (px <= max(ax, bx) + tolerance)
            & (py >= min(ay, by) - tolerance) & (py <= max(ay, by) + tolerance)
        )
        on_edge |= within & (np.abs(cross) <= tolerance * max(length, 1.0))
        crosses = (ay > py) != (by > py)
        if ey != 0.0:
            x_at = ax + (py - ay) * ex / ey
            inside ^= crosses & (px < x_at)
    return inside | on_edge


def squared_distances(lane_points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """(B, N) squared distances. Both the oracle and the index use this exact arithmetic."""
    dx = queries[:, 0][:, None] - lane_points[:, 0][None, :]
    dy = queries[:, 1][:, None] - lane_points[:, 1][None, :]
    return dx * dx + dy * dy


@dataclass(frozen=True, eq=False)
class Scene:
    """Lanes, regions and the ego pose. Immutable after construction."""
    lanes: Tuple[LanePolyline, ...]
    regions: Tuple[PolygonRegion, ...] = ()
    ego: Pose = field(default_factory=Pose)

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.lanes:
            raise EmptyScene("Scene has no lanes")
        ids = [lane.id for lane in self.lanes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Lane ids must be unique, got {ids}")

    @cached_property
    def ordered_lanes(self) -> Tuple[LanePolyline, ...]:
        return tuple(sorted(self.lanes, key=lambda lane: lane.id))

    @cached_property
    def lane_points(self) -> np.ndarray:
        """All lane points ordered by (lane id, point index); this order is the tie-break."""
        pts = np.concatenate([lane.points for lane in self.ordered_lanes], axis=0)
        pts.setflags(write=False)
        return pts

    @cached_property
    def lane_headings(self) -> np.ndarray:
        hdg = np.concatenate([lane.headings for lane in self.ordered_lanes], axis=0)
        hdg.setflags(write=False)
        return hdg

    @cached_property
    def lane_point_refs(self) -> List[Tuple[str, int]]:
        return [(lane.id, i) for lane in self.ordered_lanes for i in range(lane.points.shape[0])]

    def regions_of(self, kind: RegionKind) -> List[PolygonRegion]:
        kind = RegionKind(kind)
        return [region for region in self.regions if region.kind == kind]


def nearest_lane_indices(scene: Scene, queries: np.ndarray) -> np.ndarray:
    """Linear scan over every lane point for each query; ties go to the lowest (lane id, index)."""
    lane_points = scene.lane_points
    if lane_points.shape[0] == 0:
        raise EmptyScene("Scene has no lane points")
    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    result = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], ORACLE_CHUNK):
        block = q[start:start + ORACLE_CHUNK]
        result[start:start + block.shape[0]] = np.argmin(squared_distances(lane_points, block), axis=1)
    return result


def nearest_lane_heading(scene: Scene, p: Point2) -> AngleDeg:
    """
    Heading of the lane point closest to p.

    Raises:
        EmptyScene: if the scene has no lane points
    """
    index = int(nearest_lane_indices(scene, np.array([[p.x, p.y]]))[0])
    return AngleDeg(float(scene.lane_headings[index]))


def points_in_region(scene: Scene, points: np.ndarray, kind: RegionKind) -> np.ndarray:
    """
    Vectorized membership test against every region of one kind.

    Args:
        scene: Scene holding the regions
        points: (N, 2) global points
        kind: Region kind to test

    Returns:
        Boolean mask of length N
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    hit = np.zeros(pts.shape[0], dtype=bool)
    for region in scene.regions_of(kind):
        hit |= polygon_contains(region.vertices, pts)
    return hit


def in_region(scene: Scene, p: Point2, kind: RegionKind) -> bool:
    """True when p lies inside any region of the given kind."""
    return bool(points_in_region(scene, np.array([[p.x, p.y]]), kind)[0])


# Synthetic scenes

class SyntheticSpec(BaseModel):
    """Parameters of a generated road scene. Validation happens in synth_scene."""
    kind: Literal["straight", "arc", "four_way"] = "straight"
    num_lanes: int = 1
    lane_headings: Optional[List[float]] = None  # per-lane offsets from the road direction
    lane_width: float = 3.5
    length: float = 100.0
    radius: float = 20.0
    span_deg: float = 90.0
    leg_length: float = 50.0
    center_offset: float = 30.0
    spacing: float = 0.5
    rotation_deg: float = 0.0
    heading_jitter_deg: float = 0.0
    seed: int = 0


def _line(start: Tuple[float, float], end: Tuple[float, float], spacing: float) -> np.ndarray:
    length = math.hypot(end[0] - start[0], end[1] - start[1])
    count = max(1, math.ceil(length / spacing - 1e-9))
    t = np.linspace(0.0, 1.0, count + 1)
    return np.stack([start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1])], axis=1)


def _validate(spec: SyntheticSpec) -> List[float]:
    if spec.num_lanes < 1:
        raise InvalidSpec(f"num_lanes must be at least 1, got {spec.num_lanes}")
    if not 0 < spec.spacing <= DEFAULT_MAX_SPACING:
        raise InvalidSpec(f"spacing must be in (0, {DEFAULT_MAX_SPACING}], got {spec.spacing}")
    if spec.lane_width <= 0:
        raise InvalidSpec(f"lane_width must be positive, got {spec.lane_width}")
    if spec.heading_jitter_deg < 0:
        raise InvalidSpec("heading_jitter_deg must be non-negative")
    offsets = spec.lane_headings if spec.lane_headings is not None else [0.0] * spec.num_lanes
    if len(offsets) != spec.num_lanes:
        raise InvalidSpec(f"lane_headings has {len(offsets)} entries for {spec.num_lanes} lanes")
    if spec.kind == "straight" and spec.length <= 0:
        raise InvalidSpec(f"length must be positive, got {spec.length}")
    if spec.kind == "arc":
        if spec.radius <= 0:
            raise InvalidSpec(f"radius must be positive, got {spec.radius}")
        if not 0 < spec.span_deg <= 180:
            raise InvalidSpec(f"span_deg must be in (0, 180], got {spec.span_deg}")
        if spec.radius <= spec.lane_width / 2:
            raise InvalidSpec("radius must exceed half the lane width")
    if spec.kind == "four_way" and (spec.leg_length <= 0 or spec.center_offset <= spec.lane_width):
        raise InvalidSpec("four_way needs a positive leg_length and center_offset beyond the box edge")
    return [float(o) for o in offsets]


def _straight(spec: SyntheticSpec, offsets: List[float]):
    w = spec.lane_width
    y0, y1 = -0.2 * spec.length, 0.8 * spec.length
    lanes = []
    for i, offset in enumerate(offsets):
        pts = _line((i * w, y0), (i * w, y1), spec.spacing)
        lanes.append((f"lane_{i}", pts, np.full(pts.shape[0], offset)))
    x_lo, x_hi = -w / 2, (spec.num_lanes - 0.5) * w
    drivable = np.array([[x_lo, y0], [x_hi, y0], [x_hi, y1], [x_lo, y1]])
    return lanes, [(drivable, RegionKind.DRIVABLE)], (0.0, 0.0)


def _arc(spec: SyntheticSpec, offsets: List[float]):
    w, R = spec.lane_width, spec.radius
    span = math.radians(spec.span_deg)
    lanes = []
    for i, offset in enumerate(offsets):
        r = R + i * w
        count = max(1, math.ceil(r * span / spec.spacing - 1e-9))
        phi = np.linspace(0.0, span, count + 1)
        pts = np.stack([R - r * np.cos(phi), r * np.sin(phi)], axis=1)
        lanes.append((f"lane_{i}", pts, np.degrees(phi) + offset))
    outer_r, inner_r = R + (spec.num_lanes - 0.5) * w, R - w / 2
    phi = np.linspace(0.0, span, max(8, math.ceil(spec.span_deg / 2)) + 1)
    outer = np.stack([R - outer_r * np.cos(phi), outer_r * np.sin(phi)], axis=1)
    inner = np.stack([R - inner_r * np.cos(phi), inner_r * np.sin(phi)], axis=1)[::-1]
    drivable = np.concatenate([outer, inner], axis=0)
    return lanes, [(drivable, RegionKind.DRIVABLE)], (0.0, 0.0)


def _four_way(spec: SyntheticSpec, offsets: List[float]):
    w, L, c, s = spec.lane_width, spec.leg_length, spec.center_offset, spec.spacing
    h = w / 2
    base = offsets[0]
    legs = [
        ("ns_east_in", (h, c - w - L), (h, c - w), 0.0),
        ("ns_east_out", (h, c + w), (h, c + w + L), 0.0),
        ("ns_west_in", (-h, c + w + L), (-h, c + w), 180.0),
        ("ns_west_out", (-h, c - w), (-h, c - w - L), 180.0),
        ("ew_south_in", (-w - L, c - h), (-w, c - h), 90.0),
        ("ew_south_out", (w, c - h), (w + L, c - h), 90.0),
        ("ew_north_in", (w + L, c + h), (w, c + h), 270.0),
        ("ew_north_out", (-w, c + h), (-w - L, c + h), 270.0),
    ]
    lanes = []
    for lane_id, start, end, heading in legs:
        pts = _line(start, end, s)
        lanes.append((lane_id, pts, np.full(pts.shape[0], heading + base)))
    box = np.array([[-w, c - w], [w, c - w], [w, c + w], [-w, c + w]])
    cross = np.array([
        [w, c - w - L], [w, c - w], [w + L, c - w], [w + L, c + w], [w, c + w], [w, c + w + L],
        [-w, c + w + L], [-w, c + w], [-w - L, c + w], [-w - L, c - w], [-w, c - w], [-w, c - w - L],
    ])
    return lanes, [(cross, RegionKind.DRIVABLE), (box, RegionKind.INTERSECTION)], (h, 0.0)


_BUILDERS = {"straight": _straight, "arc": _arc, "four_way": _four_way}


def synth_scene(spec: SyntheticSpec) -> Scene:
    """
    Build a deterministic synthetic scene.

    The whole scene (lanes, regions and ego) is rotated about the global origin by
    spec.rotation_deg, so rotated variants keep every relative heading.

    Raises:
        InvalidSpec: if the parameters cannot describe a road
    """
    offsets = _validate(spec)
    raw_lanes, raw_regions, ego_xy = _BUILDERS[spec.kind](spec, offsets)
    rng = np.random.default_rng(spec.seed)
    rotation = Pose.from_values(0.0, 0.0, spec.rotation_deg)

    lanes = []
    for lane_id, pts, headings in raw_lanes:
        if spec.heading_jitter_deg > 0:
            headings = headings + rng.uniform(-spec.heading_jitter_deg, spec.heading_jitter_deg, headings.shape[0])
        lanes.append(LanePolyline(
            id=lane_id,
            points=rotation.to_global_points(pts),
            headings=headings + spec.rotation_deg,
        ))
    regions = [PolygonRegion(rotation.to_global_points(verts), kind) for verts, kind in raw_regions]
    ego_global = rotation.to_global_points(np.array([ego_xy]))[0]
    ego = Pose.from_values(ego_global[0], ego_global[1], spec.rotation_deg)
    logger.debug("Synthesized %s scene with %d lanes", spec.kind, len(lanes))
    return Scene(lanes=tuple(lanes), regions=tuple(regions), ego=ego)
