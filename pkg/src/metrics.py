"""
Metrics Module - Evaluation suite for multimodal trajectory predictions.
Off-yaw measure and rate, off-road rate, minADE_k, minFDE_k and miss rate.
All means are plain left-to-right sums so results are reproducible bit for bit.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.errors import BatchShapeMismatch, DegenerateTrajectory, EmptyBatch, MissingDrivableArea
from src.geometry import (
    Pose,
    Trajectory,
    angular_difference_array,
    segment_headings_deg,
    segment_midpoints,
    signed_residual_deg,
)
from src.heading_raster import INTERSECTION_VALUE, HeadingRaster, decode_values, lookup_cells
from src.scene import RegionKind, Scene, points_in_region
from models.report import EvalReport, SampleMetrics


logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-6


def sequential_mean(values: Iterable[float]) -> float:
    """Left-to-right sum divided by the count; every aggregate in a report goes through here."""
    items = [float(v) for v in values]
    return sum(items) / len(items)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """m candidate trajectories for one sample with their probabilities."""
    trajectories: Tuple[Trajectory, ...]
    probabilities: np.ndarray
    ego: Pose = Pose()

    def __post_init__(self):
        trajectories = tuple(self.trajectories)
        probs = np.array(self.probabilities, dtype=float).reshape(-1)
        if not trajectories:
            raise ValueError("PredictionSet needs at least one mode")
        if probs.shape[0] != len(trajectories):
            raise ValueError(f"{len(trajectories)} modes but {probs.shape[0]} probabilities")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"Mode probabilities must be non-negative and sum to 1, got {probs.tolist()}")
        first = trajectories[0]
        for traj in trajectories[1:]:
            if len(traj) != len(first) or traj.dt != first.dt:
                raise ValueError("All modes must share length and dt")
        probs.setflags(write=False)
        object.__setattr__(self, "trajectories", trajectories)
        object.__setattr__(self, "probabilities", probs)

    @property
    def num_modes(self) -> int:
        return len(self.trajectories)

    def stacked(self) -> np.ndarray:
        """(m, n+1, 2) array of every mode."""
        return np.stack([t.points for t in self.trajectories], axis=0)

    def with_points(self, stacked: np.ndarray) -> "PredictionSet":
        dt = self.trajectories[0].dt
        return PredictionSet(tuple(Trajectory(points, dt) for points in stacked), self.probabilities, self.ego)

    def truncated(self, horizon_steps: int) -> "PredictionSet":
        return PredictionSet(tuple(t.truncated(horizon_steps) for t in self.trajectories), self.probabilities, self.ego)


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = 45.0
    k_values: Tuple[int, ...] = (1, 5, 10)
    miss_threshold: float = 2.0
    horizon_steps: int = 12

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, v: float) -> float:
        if not 0 <= v < 180:
            raise ValueError(f"alpha must be in [0, 180), got {v}")
        return v

    @field_validator("k_values")
    @classmethod
    def _k_positive(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(k < 1 for k in v):
            raise ValueError(f"k values must be at least 1, got {v}")
        return v

    @field_validator("miss_threshold")
    @classmethod
    def _threshold_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"miss_threshold must be positive, got {v}")
        return v

    @field_validator("horizon_steps")
    @classmethod
    def _horizon_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"horizon_steps must be at least 1, got {v}")
        return v


@dataclass(frozen=True)
class SegmentTerms:
    """Per-segment quantities shared by the off-yaw metric and YawLoss."""
    headings: np.ndarray        # global segment headings, degrees
    lane_headings: np.ndarray   # decoded raster headings, NaN where unavailable
    residual: np.ndarray        # heading - lane heading in [-180, 180)
    delta: np.ndarray           # absolute angular difference, degrees
    values: np.ndarray          # gated contribution, radians
    gate_slope: np.ndarray      # d(value)/d(delta) in rad/rad
    intersection: np.ndarray
    off_map: np.ndarray
    stationary: np.ndarray

    @property
    def has_heading(self) -> np.ndarray:
        return ~(self.intersection | self.off_map | self.stationary)


def gate(delta_deg: np.ndarray, alpha: float, width: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Threshold gate on the angular difference.

    With width 0 this is the hard gate (0 up to alpha, delta above it). A positive width
    ramps the weight linearly from 0 at alpha to 1 at alpha + width.

    Returns:
        Tuple of (value in radians, slope d value / d delta in rad/rad)
    """
    delta_rad = np.radians(delta_deg)
    if width <= 0:
        active = delta_deg > alpha
        return np.where(active, delta_rad, 0.0), np.where(active, 1.0, 0.0)
    ramp = np.clip((delta_deg - alpha) / width, 0.0, 1.0)
    in_ramp = (delta_deg > alpha) & (delta_deg < alpha + width)
    slope = ramp + np.where(in_ramp, delta_rad * (180.0 / math.pi) / width, 0.0)
    return ramp * delta_rad, slope


def segment_terms(points: np.ndarray, raster: HeadingRaster, ego: Pose, alpha: float, gate_width: float = 0.0) -> SegmentTerms:
    """
    Evaluate every segment of a local-frame trajectory against the raster.

    Raises:
        DegenerateTrajectory: if there are fewer than 2 points
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegenerateTrajectory("Off-yaw needs at least 2 trajectory points")
    local_headings, stationary = segment_headings_deg(pts)
    headings = np.mod(local_headings + ego.heading.value, 360.0)
    mids_global = ego.to_global_points(segment_midpoints(pts))
    cell_values, on_map = lookup_cells(raster, mids_global)
    off_map = ~on_map
    intersection = on_map & (cell_values == INTERSECTION_VALUE)
    lane_headings = np.where(on_map, decode_values(cell_values), np.nan)

    usable = ~(intersection | off_map | stationary)
    residual = np.where(usable, signed_residual_deg(headings, np.nan_to_num(lane_headings)), 0.0)
    delta = np.where(usable, angular_difference_array(headings, np.nan_to_num(lane_headings)), 0.0)
    values, slope = gate(delta, alpha, gate_width)
    values = np.where(usable, values, 0.0)
    slope = np.where(usable, slope, 0.0)
    return SegmentTerms(headings, lane_headings, residual, delta, values, slope, intersection, off_map, stationary)


def off_yaw_measure(traj: Trajectory, raster: HeadingRaster, ego: Pose, alpha: float = 45.0, gate_width: float = 0.0) -> float:
    """Mean gated angular deviation over the n segments, in radians."""
    return sequential_mean(segment_terms(traj.points, raster, ego, alpha, gate_width).values)


def mode_measures(preds: PredictionSet, raster: HeadingRaster, alpha: float = 45.0, gate_width: float = 0.0) -> List[float]:
    """Off-yaw measure of every mode, in mode order."""
    return [off_yaw_measure(traj, raster, preds.ego, alpha, gate_width) for traj in preds.trajectories]


def off_yaw_sample(preds: PredictionSet, raster: HeadingRaster, alpha: float = 45.0, gate_width: float = 0.0) -> float:
    """Mean over modes of the off-yaw measure, in radians."""
    return sequential_mean(mode_measures(preds, raster, alpha, gate_width))


def off_yaw_rate(samples: Sequence[Tuple[PredictionSet, HeadingRaster]], alpha: float = 45.0) -> float:
    """
    Raises:
        EmptyBatch: if there are no samples
    """
    if not samples:
        raise EmptyBatch("off_yaw_rate needs at least one sample")
    return sequential_mean(off_yaw_sample(preds, raster, alpha) for preds, raster in samples)


def off_yaw_event_fraction(preds: PredictionSet, raster: HeadingRaster, alpha: float = 45.0) -> float:
    """Fraction of modes with at least one penalized segment."""
    return sequential_mean(1.0 if m > 0 else 0.0 for m in mode_measures(preds, raster, alpha))


def alpha_sweep(samples: Sequence[Tuple[PredictionSet, HeadingRaster]], alphas: Sequence[float]) -> Dict[float, float]:
    """
    Off-yaw rate of the same batch under each threshold.

    Args:
        samples: (PredictionSet, HeadingRaster) pairs
        alphas: Thresholds in degrees

    Returns:
        Dictionary mapping each threshold to its off-yaw rate
    """
    return {float(a): off_yaw_rate(samples, a) for a in alphas}


def top_k_indices(probabilities: np.ndarray, k: int) -> Tuple[np.ndarray, bool]:
    """
    The k most probable modes, ties broken by mode index.

    Returns:
        Tuple of (mode indices, whether k was clamped to the number of modes)
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    m = len(probabilities)
    clamped = k > m
    if clamped:
        logger.warning("k=%d exceeds %d modes, clamping", k, m)
    order = np.argsort(-np.asarray(probabilities, dtype=float), kind="stable")
    return order[:min(k, m)], clamped


def _check_alignment(preds: PredictionSet, gt: Trajectory) -> None:
    first = preds.trajectories[0]
    if len(first) != len(gt) or first.dt != gt.dt:
        raise BatchShapeMismatch(
            f"Ground truth has {len(gt)} points at dt={gt.dt}, predictions have {len(first)} at dt={first.dt}"
        )


def _displacements(preds: PredictionSet, gt: Trajectory, k: int) -> np.ndarray:
    """(k, n) pointwise L2 distances over prediction steps 1..n for the top-k modes."""
    _check_alignment(preds, gt)
    chosen, _ = top_k_indices(preds.probabilities, k)
    stacked = preds.stacked()[chosen, 1:, :]
    diff = stacked - gt.points[None, 1:, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def min_ade_k(preds: PredictionSet, gt: Trajectory, k: int) -> float:
    """
    Lowest average displacement to gt among the k most probable modes.

    Args:
        preds: Prediction set with the same number of steps as gt
        gt: Ground-truth trajectory
        k: Number of modes considered; clamped to the number of modes

    Returns:
        Distance in meters, averaged over prediction steps 1..n

    Raises:
        BatchShapeMismatch: if preds and gt differ in length
    """
    dist = _displacements(preds, gt, k)
    return min(sequential_mean(row) for row in dist)


def min_fde_k(preds: PredictionSet, gt: Trajectory, k: int) -> float:
    """Lowest final-step displacement among the k most probable modes, in meters."""
    dist = _displacements(preds, gt, k)
    return float(dist[:, -1].min())


def is_miss(preds: PredictionSet, gt: Trajectory, k: int, threshold: float = 2.0) -> bool:
    """A sample is a hit when some top-k mode stays within threshold of gt at every step."""
    dist = _displacements(preds, gt, k)
    return bool(np.all(dist.max(axis=1) > threshold))


def miss_rate_k(batch: Sequence[Tuple[PredictionSet, Trajectory]], k: int, threshold: float = 2.0) -> float:
    """
    Raises:
        EmptyBatch: if there are no samples
    """
    if not batch:
        raise EmptyBatch("miss_rate_k needs at least one sample")
    return sequential_mean(1.0 if is_miss(preds, gt, k, threshold) else 0.0 for preds, gt in batch)


def off_road_rate(preds: PredictionSet, scene: Scene) -> float:
    """
    Fraction of predicted points (steps 1..n of every mode) outside the drivable area.

    Raises:
        MissingDrivableArea: if the scene has no drivable region
    """
    if not scene.regions_of(RegionKind.DRIVABLE):
        raise MissingDrivableArea("Scene defines no drivable region")
    points = preds.stacked()[:, 1:, :].reshape(-1, 2)
    inside = points_in_region(scene, preds.ego.to_global_points(points), RegionKind.DRIVABLE)
    return float(np.count_nonzero(~inside)) / float(inside.shape[0])


def ground_truth_is_clean(gt: Trajectory, raster: HeadingRaster, ego: Pose) -> bool:
    """False when any gt point or midpoint lands in an intersection cell or off the map."""
    pts = np.concatenate([gt.points, segment_midpoints(gt.points)], axis=0)
    values, on_map = lookup_cells(raster, ego.to_global_points(pts))
    return bool(np.all(on_map) and np.all(values != INTERSECTION_VALUE))


def metric_keys(config: EvalConfig) -> List[str]:
    """Column order of the report: the Table-I-shaped row, then diagnostics."""
    keys = [f"min_ade_{k}" for k in config.k_values]
    keys += [f"min_fde_{k}" for k in config.k_values]
    keys += [f"miss_rate_{k}" for k in config.k_values]
    keys += ["off_road_rate", "off_yaw_rate", "off_yaw_event_fraction", "off_yaw_sum", "raw_yaw_sum"]
    return keys


def evaluate_sample(index: int, preds: PredictionSet, gt: Trajectory, scene: Scene, raster: HeadingRaster, config: EvalConfig) -> SampleMetrics:
    """
    Every metric of one sample, with preds and gt cut to config.horizon_steps.

    Returns:
        SampleMetrics with the values, the clamped k list and the masking counts
    """
    preds = preds.truncated(config.horizon_steps)
    gt = gt.truncated(config.horizon_steps)
    values: Dict[str, float] = {}
    clamped: List[int] = []
    for k in config.k_values:
        if top_k_indices(preds.probabilities, k)[1]:
            clamped.append(k)
        values[f"min_ade_{k}"] = min_ade_k(preds, gt, k)
    for k in config.k_values:
        values[f"min_fde_{k}"] = min_fde_k(preds, gt, k)
    for k in config.k_values:
        values[f"miss_rate_{k}"] = 1.0 if is_miss(preds, gt, k, config.miss_threshold) else 0.0
    values["off_road_rate"] = off_road_rate(preds, scene)

    terms = [segment_terms(t.points, raster, preds.ego, config.alpha) for t in preds.trajectories]
    measures = [sequential_mean(t.values) for t in terms]
    values["off_yaw_rate"] = sequential_mean(measures)
    values["off_yaw_event_fraction"] = sequential_mean(1.0 if m > 0 else 0.0 for m in measures)
    values["off_yaw_sum"] = sum(measures)
    values["raw_yaw_sum"] = sum(float(np.radians(t.delta[t.has_heading]).sum()) for t in terms)

    return SampleMetrics(
        sample_index=index,
        values=values,
        intersection_midpoints=sum(int(t.intersection.sum()) for t in terms),
        off_map_midpoints=sum(int(t.off_map.sum()) for t in terms),
        stationary_segments=sum(int(t.stationary.sum()) for t in terms),
        k_clamped=clamped,
    )


def evaluate_batch(
    samples: Sequence[PredictionSet],
    gts: Sequence[Trajectory],
    scenes: Sequence[Scene],
    rasters: Sequence[HeadingRaster],
    config: Optional[EvalConfig] = None,
    workers: int = 1,
    sample_indices: Optional[Sequence[int]] = None,
    excluded_samples: Optional[Sequence[int]] = None,
) -> EvalReport:
    """
    Per-sample and aggregate metrics for an aligned batch.

    Raises:
        BatchShapeMismatch: if the input lists differ in length
        EmptyBatch: if the batch is empty
    """
    config = config or EvalConfig()
    lengths = {"samples": len(samples), "gts": len(gts), "scenes": len(scenes), "rasters": len(rasters)}
    if len(set(lengths.values())) != 1:
        raise BatchShapeMismatch(f"Batch inputs differ in length: {lengths}")
    if not samples:
        raise EmptyBatch("evaluate_batch needs at least one sample")

    def run(i: int) -> SampleMetrics:
        index = sample_indices[i] if sample_indices is not None else i
        return evaluate_sample(index, samples[i], gts[i], scenes[i], rasters[i], config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sample = list(pool.map(run, range(len(samples))))
    else:
        per_sample = [run(i) for i in range(len(samples))]
    return EvalReport.from_samples(config.model_dump(mode="json"), metric_keys(config), per_sample,
                                   list(excluded_samples or []))
