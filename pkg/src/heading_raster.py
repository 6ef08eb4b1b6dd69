"""
Heading Raster Module - The secondary map of nearest-lane headings.
Each 8-bit cell holds the encoded heading of the L2-nearest lane point; 0 marks intersections.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.errors import EmptyScene, IntersectionSentinel
from src.geometry import AngleDeg, Point2, Pose, normalize_deg_array
from src.scene import RegionKind, Scene, points_in_region, squared_distances


logger = logging.getLogger(__name__)

INTERSECTION_VALUE = 0
ENCODE_SCALE = 254.0 / 360.0
BIN_WIDTH_DEG = 360.0 / 254.0
GRID_TOLERANCE = 1e-9
TILE_CELLS = 32
QUERY_TILE = 1024
QUERY_TILE_BUCKETS = 8


def encode_heading(theta) -> int:
    """Map a heading in [0, 360) to a grayscale value in [1, 255], rounding half to even."""
    value = theta.value if isinstance(theta, AngleDeg) else float(theta)
    return int(min(255, max(1, 1 + round(ENCODE_SCALE * value))))


def encode_headings(theta: np.ndarray) -> np.ndarray:
    """Vectorized encode_heading; np.rint also rounds half to even."""
    encoded = 1 + np.rint(ENCODE_SCALE * normalize_deg_array(theta))
    return np.clip(encoded, 1, 255).astype(np.uint8)


def decode_heading(g: int) -> AngleDeg:
    """
    Inverse of encode_heading up to half a bin.

    Raises:
        IntersectionSentinel: for g == 0, which carries no heading
    """
    g = int(g)
    if g == INTERSECTION_VALUE:
        raise IntersectionSentinel("Raster value 0 marks an intersection")
    if not 1 <= g <= 255:
        raise ValueError(f"Raster value must be in [1, 255], got {g}")
    return AngleDeg((g - 1) * 360.0 / 254.0)


def decode_values(values: np.ndarray) -> np.ndarray:
    """Vectorized decode. Sentinel cells decode to NaN."""
    v = np.asarray(values).astype(float)
    return np.where(v == INTERSECTION_VALUE, np.nan, normalize_deg_array((v - 1.0) * 360.0 / 254.0))


class RasterSpec(BaseModel):
    """Extents (meters) and resolution of a heading raster centered on the ego pose."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    origin_pose: Pose = Pose()
    behind_m: float = 20.0
    ahead_m: float = 80.0
    left_m: float = 50.0
    right_m: float = 50.0
    resolution: float = 0.2

    @model_validator(mode="after")
    def _check_grid(self) -> "RasterSpec":
        for name in ("behind_m", "ahead_m", "left_m", "right_m", "resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for label, span in (("width", self.left_m + self.right_m), ("height", self.behind_m + self.ahead_m)):
            cells = span / self.resolution
            if abs(cells - round(cells)) > GRID_TOLERANCE * max(1.0, cells):
                raise ValueError(f"Raster {label} {span} m is not a whole number of {self.resolution} m cells")
        return self

    @property
    def width(self) -> int:
        return int(round((self.left_m + self.right_m) / self.resolution))

    @property
    def height(self) -> int:
        return int(round((self.behind_m + self.ahead_m) / self.resolution))

    @classmethod
    def from_extents(cls, origin_pose: Pose, extents: Tuple[float, float, float, float], resolution: float) -> "RasterSpec":
        behind, ahead, left, right = extents
        return cls(origin_pose=origin_pose, behind_m=behind, ahead_m=ahead, left_m=left, right_m=right,
                   resolution=resolution)


@dataclass(frozen=True, eq=False)
class HeadingRaster:
    """Row-major uint8 grid; row 0 is the far-behind edge, column 0 the far-left edge."""
    spec: RasterSpec
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8)
        expected = (self.spec.height, self.spec.width)
        if cells.shape != expected:
            raise ValueError(f"Raster cells have shape {cells.shape}, expected {expected}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def to_local(self, points_global: np.ndarray) -> np.ndarray:
        return self.spec.origin_pose.to_local_points(points_global)


@dataclass(frozen=True)
class RasterQuery:
    kind: Literal["heading", "intersection", "off_map"]
    heading: Optional[AngleDeg] = None


def cell_centers_local(spec: RasterSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Local x of every column center and local y of every row center."""
    xs = -spec.left_m + (np.arange(spec.width) + 0.5) * spec.resolution
    ys = -spec.behind_m + (np.arange(spec.height) + 0.5) * spec.resolution
    return xs, ys


def cell_centers_global(spec: RasterSpec, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Global coordinates of the cell centers at (rows, cols)."""
    xs, ys = cell_centers_local(spec)
    local = np.stack([xs[cols], ys[rows]], axis=-1).reshape(-1, 2)
    return spec.origin_pose.to_global_points(local)


def _cell_coordinates(raster: HeadingRaster, points_global: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    spec = raster.spec
    local = raster.to_local(np.asarray(points_global, dtype=float).reshape(-1, 2))
    u = (local[:, 0] + spec.left_m) / spec.resolution
    v = (local[:, 1] + spec.behind_m) / spec.resolution
    return u, v


def lookup_cells(raster: HeadingRaster, points_global: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest-cell lookup without interpolation.

    Returns:
        Tuple of (raw cell values, on-map mask). Off-map entries hold 0 and must be read via the mask.
    """
    u, v = _cell_coordinates(raster, points_global)
    cols = np.floor(u).astype(np.int64)
    rows = np.floor(v).astype(np.int64)
    on_map = (cols >= 0) & (cols < raster.spec.width) & (rows >= 0) & (rows < raster.spec.height)
    values = np.zeros(u.shape[0], dtype=np.uint8)
    values[on_map] = raster.cells[rows[on_map], cols[on_map]]
    return values, on_map


def cell_edge_distance(raster: HeadingRaster, points_global: np.ndarray) -> np.ndarray:
    """Distance in meters from each point to the closest cell edge along either axis."""
    u, v = _cell_coordinates(raster, points_global)
    fu, fv = u - np.floor(u), v - np.floor(v)
    nearest = np.minimum(np.minimum(fu, 1.0 - fu), np.minimum(fv, 1.0 - fv))
    return nearest * raster.spec.resolution


def query(raster: HeadingRaster, p_global: Point2) -> RasterQuery:
    """
    Look up the cell under a global point.

    Returns:
        RasterQuery of kind heading (with the decoded lane heading), intersection or off_map
    """
    values, on_map = lookup_cells(raster, np.array([[p_global.x, p_global.y]]))
    if not on_map[0]:
        return RasterQuery("off_map")
    if values[0] == INTERSECTION_VALUE:
        return RasterQuery("intersection")
    return RasterQuery("heading", decode_heading(int(values[0])))


class LaneIndex:
    """
    Uniform-grid bucketing of lane points for exact nearest-point queries.

    Queries are answered tile by tile: one bucket lookup bounds the nearest distance for the
    whole tile, every bucket inside that bound is gathered, and the tile is scanned against the
    gathered points in global order, so ties resolve exactly as in the linear scan.
    """

    def __init__(self, points: np.ndarray, headings: np.ndarray, bucket_size: float = 2.0):
        if points.shape[0] == 0:
            raise EmptyScene("Cannot index a scene without lane points")
        self.points = points
        self.headings = headings
        self.size = bucket_size
        self.grid: Dict[Tuple[int, int], np.ndarray] = {}
        keys = np.floor(points / bucket_size).astype(np.int64)
        order = np.lexsort((np.arange(points.shape[0]), keys[:, 1], keys[:, 0]))
        sorted_keys = keys[order]
        bounds = np.flatnonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1)) + 1
        for chunk in np.split(order, bounds):
            cell = (int(keys[chunk[0], 0]), int(keys[chunk[0], 1]))
            self.grid[cell] = np.sort(chunk)
        self.min_key = keys.min(axis=0)
        self.max_key = keys.max(axis=0)

    def _gather(self, center: np.ndarray, radius: float) -> np.ndarray:
        lo = np.maximum(np.floor((center - radius) / self.size).astype(np.int64), self.min_key)
        hi = np.minimum(np.floor((center + radius) / self.size).astype(np.int64), self.max_key)
        found: List[np.ndarray] = []
        for i in range(int(lo[0]), int(hi[0]) + 1):
            for j in range(int(lo[1]), int(hi[1]) + 1):
                bucket = self.grid.get((i, j))
                if bucket is not None:
                    found.append(bucket)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(found))

    def _upper_bound(self, center: np.ndarray) -> float:
        radius = self.size
        while True:
            candidates = self._gather(center, radius)
            if candidates.size:
                d2 = squared_distances(self.points[candidates], center[None, :])
                return float(math.sqrt(d2.min()))
            radius *= 2.0

    def nearest_indices(self, queries: np.ndarray) -> np.ndarray:
        """Index of the nearest lane point for each query. Scattered queries are grouped into spatial tiles."""
        q = np.asarray(queries, dtype=float).reshape(-1, 2)
        if q.shape[0] <= QUERY_TILE:
            return self._nearest_tile(q)
        result = np.empty(q.shape[0], dtype=np.int64)
        tile_keys = np.floor(q / (self.size * QUERY_TILE_BUCKETS)).astype(np.int64)
        _, groups = np.unique(tile_keys, axis=0, return_inverse=True)
        for group in range(int(groups.max()) + 1):
            members = np.flatnonzero(groups.reshape(-1) == group)
            for start in range(0, members.shape[0], QUERY_TILE):
                chunk = members[start:start + QUERY_TILE]
                result[chunk] = self._nearest_tile(q[chunk])
        return result

    def _nearest_tile(self, q: np.ndarray) -> np.ndarray:
        if q.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        center = (q.min(axis=0) + q.max(axis=0)) / 2.0
        half_diag = float(np.sqrt(squared_distances(center[None, :], q).max()))
        # Any point's nearest lies within 2 * half_diag + bound of the tile center.
        radius = 2.0 * half_diag + self._upper_bound(center) + GRID_TOLERANCE
        candidates = self._gather(center, radius)
        local = np.argmin(squared_distances(self.points[candidates], q), axis=1)
        return candidates[local]

    def nearest_heading(self, p: Point2) -> AngleDeg:
        return AngleDeg(float(self.headings[self.nearest_indices(np.array([[p.x, p.y]]))[0]]))


def build_index(scene: Scene, bucket_size: float = 2.0) -> LaneIndex:
    """
    Raises:
        EmptyScene: if the scene has no lane points
    """
    return LaneIndex(scene.lane_points, scene.lane_headings, bucket_size)


def _tiles(spec: RasterSpec) -> List[Tuple[slice, slice]]:
    return [
        (slice(r, min(r + TILE_CELLS, spec.height)), slice(c, min(c + TILE_CELLS, spec.width)))
        for r in range(0, spec.height, TILE_CELLS)
        for c in range(0, spec.width, TILE_CELLS)
    ]


def rasterize(scene: Scene, spec: RasterSpec, workers: int = 1) -> HeadingRaster:
    """
    Build the secondary heading map for a scene.

    Each cell center takes the encoded heading of its nearest lane point, or 0 when the
    center lies in an intersection region. Tiles are independent and may run in parallel;
    the output does not depend on the worker count.

    Raises:
        EmptyScene: if the scene has no lane points
    """
    index = build_index(scene)
    cells = np.zeros((spec.height, spec.width), dtype=np.uint8)

    def fill(tile: Tuple[slice, slice]) -> None:
        rows_slice, cols_slice = tile
        rows, cols = np.meshgrid(np.arange(spec.height)[rows_slice], np.arange(spec.width)[cols_slice], indexing="ij")
        centers = cell_centers_global(spec, rows.ravel(), cols.ravel())
        nearest = index.nearest_indices(centers)
        values = encode_headings(scene.lane_headings[nearest])
        values[points_in_region(scene, centers, RegionKind.INTERSECTION)] = INTERSECTION_VALUE
        cells[rows_slice, cols_slice] = values.reshape(rows.shape)

    tiles = _tiles(spec)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, tiles))
    else:
        for tile in tiles:
            fill(tile)
    logger.info("Rasterized %dx%d cells from %d lane points", spec.width, spec.height, scene.lane_points.shape[0])
    return HeadingRaster(spec=spec, cells=cells)
