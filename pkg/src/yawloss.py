"""
YawLoss Module - Differentiable off-yaw penalty for trajectory predictors.

The loss is the off-yaw measure scaled by a weight, evaluated through the same
segment kernel as the metric. Gradients are analytic with respect to every predicted
point; lane headings and the intersection mask are treated as constants.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.errors import DivergedRefinement
from src.geometry import Pose, segment_midpoints, segment_vectors
from src.heading_raster import HeadingRaster, cell_edge_distance
from src.metrics import PredictionSet, SegmentTerms, off_yaw_sample, segment_terms, sequential_mean
from models.report import GradCheckEntry, GradCheckReport


logger = logging.getLogger(__name__)

ANTIPODAL_DEG = 180.0
ZERO_GRADIENT_FLOOR = 1e-10


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = 45.0
    scale: float = 1.0
    smooth_gate_width: float = 0.0

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, v: float) -> float:
        if not 0 <= v < 180:
            raise ValueError(f"alpha must be in [0, 180), got {v}")
        return v

    @field_validator("scale", "smooth_gate_width")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"value must be non-negative, got {v}")
        return v


@dataclass(frozen=True, eq=False)
class TrajectoryGradient:
    """d loss / d point for one mode, shape (n+1, 2). Row 0 is the fixed current position."""
    values: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True)
class TraceRow:
    step: int
    total: float
    yaw: float
    anchor: float


@dataclass(frozen=True)
class RefinementResult:
    preds: PredictionSet
    trace: List[TraceRow] = field(default_factory=list)
    stop_reason: Literal["converged", "stalled", "max_steps"] = "max_steps"

    @property
    def initial_loss(self) -> float:
        return self.trace[0].yaw

    @property
    def final_loss(self) -> float:
        return self.trace[-1].yaw

    @property
    def ratio(self) -> float:
        return self.final_loss / self.initial_loss if self.initial_loss > 0 else 0.0


def yaw_loss(preds: PredictionSet, raster: HeadingRaster, cfg: Optional[LossConfig] = None) -> float:
    """scale times the sample off-yaw value. With the hard gate and scale 1 it equals off_yaw_sample exactly."""
    cfg = cfg or LossConfig()
    return cfg.scale * off_yaw_sample(preds, raster, cfg.alpha, cfg.smooth_gate_width)


def _stacked_loss(stacked: np.ndarray, raster: HeadingRaster, ego: Pose, cfg: LossConfig) -> float:
    # Same arithmetic as yaw_loss without rebuilding validated Trajectory objects.
    measures = [sequential_mean(segment_terms(points, raster, ego, cfg.alpha, cfg.smooth_gate_width).values)
                for points in stacked]
    return cfg.scale * sequential_mean(measures)


def _mode_gradient(points: np.ndarray, terms: SegmentTerms, weight: float, antipodal_sign: float = 0.0) -> np.ndarray:
    deltas = segment_vectors(points)
    length_sq = deltas[:, 0] ** 2 + deltas[:, 1] ** 2
    # sign of the wrapped residual; exactly antipodal segments get antipodal_sign
    sign = np.where(terms.delta >= ANTIPODAL_DEG, antipodal_sign, np.sign(terms.residual))
    coef = weight * terms.gate_slope * sign
    safe = np.where(length_sq > 0, length_sq, 1.0)
    # d theta / d (dx, dy) for theta = atan2(dx, dy)
    dtheta = np.stack([deltas[:, 1] / safe, -deltas[:, 0] / safe], axis=1)
    per_segment = coef[:, None] * dtheta
    grad = np.zeros_like(points, dtype=float)
    grad[1:] += per_segment
    grad[:-1] -= per_segment
    grad[0] = 0.0
    return grad


def _stacked_gradient(stacked: np.ndarray, raster: HeadingRaster, ego: Pose, cfg: LossConfig,
                      antipodal_sign: float = 0.0) -> np.ndarray:
    m, n = stacked.shape[0], stacked.shape[1] - 1
    weight = cfg.scale / (m * n)
    return np.stack([
        _mode_gradient(points, segment_terms(points, raster, ego, cfg.alpha, cfg.smooth_gate_width), weight,
                       antipodal_sign)
        for points in stacked
    ])


def displacement_gradient(point_grad: np.ndarray) -> np.ndarray:
    """
    Re-express a gradient over points 1..n as a gradient over segment displacements.

    Point i is the sum of displacements 1..i, so each displacement collects the gradient of
    every point after it. With lane headings held fixed, the yaw term of a segment depends
    only on its own displacement and its gradient comes back unchanged.

    Args:
        point_grad: (m, n+1, 2) gradient; row 0 belongs to the fixed current position

    Returns:
        (m, n, 2) gradient, one row per segment
    """
    tail = point_grad[:, 1:]
    return np.flip(np.cumsum(np.flip(tail, axis=1), axis=1), axis=1)


def yaw_loss_grad(preds: PredictionSet, raster: HeadingRaster, cfg: Optional[LossConfig] = None) -> List[TrajectoryGradient]:
    """
    Analytic gradient of yaw_loss with respect to every predicted point.

    Segments that are masked (intersection, off-map, stationary) or under the gate contribute
    nothing. Local and global headings differ by a constant, so the derivative is taken in the
    local frame directly.

    Returns:
        One TrajectoryGradient per mode
    """
    cfg = cfg or LossConfig()
    grads = _stacked_gradient(preds.stacked(), raster, preds.ego, cfg)
    return [TrajectoryGradient(g) for g in grads]


def _exclusion_reasons(points: np.ndarray, raster: HeadingRaster, ego: Pose, cfg: LossConfig,
                       h: float, gate_band: float, edge_band: float) -> List[Optional[str]]:
    """Per-segment reason a finite difference across it is not trustworthy."""
    terms = segment_terms(points, raster, ego, cfg.alpha, cfg.smooth_gate_width)
    deltas = segment_vectors(points)
    lengths = np.hypot(deltas[:, 0], deltas[:, 1])
    edge = cell_edge_distance(raster, ego.to_global_points(segment_midpoints(points)))
    usable = terms.has_heading
    kinks = [cfg.alpha] + ([cfg.alpha + cfg.smooth_gate_width] if cfg.smooth_gate_width > 0 else [])

    reasons: List[Optional[str]] = []
    for i in range(points.shape[0] - 1):
        if terms.stationary[i] or lengths[i] <= 2.0 * h:
            reasons.append("stationary")
        elif edge[i] <= edge_band:
            reasons.append("cell_edge")
        elif usable[i] and any(abs(terms.delta[i] - k) <= gate_band for k in kinks):
            reasons.append("gate")
        elif usable[i] and terms.delta[i] >= ANTIPODAL_DEG - gate_band:
            reasons.append("antipodal")
        else:
            reasons.append(None)
    return reasons


def grad_check(
    preds: PredictionSet,
    raster: HeadingRaster,
    cfg: Optional[LossConfig] = None,
    h: float = 1e-4,
    tolerance: float = 1e-4,
    gate_band: float = 0.5,
    edge_band: float = 1e-3,
) -> GradCheckReport:
    """
    Compare the analytic gradient against central finite differences.

    A coordinate is excluded when either adjacent segment sits within gate_band degrees of a
    gate kink or of the antipode, has its midpoint within edge_band meters of a raster cell
    edge, or is short enough for the perturbation to flip its direction.

    Returns:
        GradCheckReport with one entry per coordinate of every predicted point
    """
    cfg = cfg or LossConfig()
    ego = preds.ego
    base = preds.stacked()
    analytic = _stacked_gradient(base, raster, ego, cfg)

    entries: List[GradCheckEntry] = []
    exclusion_counts: Dict[str, int] = {}
    per_point_abs: Dict[str, float] = {}
    per_point_rel: Dict[str, float] = {}

    for mode in range(base.shape[0]):
        reasons = _exclusion_reasons(base[mode], raster, ego, cfg, h, gate_band, edge_band)
        n = base.shape[1] - 1
        for point in range(1, n + 1):
            adjacent = [reasons[point - 1]] + ([reasons[point]] if point < n else [])
            reason = next((r for r in adjacent if r is not None), None)
            for axis, label in enumerate(("x", "y")):
                a = float(analytic[mode, point, axis])
                if reason is not None:
                    exclusion_counts[reason] = exclusion_counts.get(reason, 0) + 1
                    entries.append(GradCheckEntry(mode=mode, point=point, axis=label, analytic=a, excluded=reason))
                    continue

                plus, minus = base.copy(), base.copy()
                plus[mode, point, axis] += h
                minus[mode, point, axis] -= h
                numeric = (_stacked_loss(plus, raster, ego, cfg) - _stacked_loss(minus, raster, ego, cfg)) / (2.0 * h)

                abs_error = abs(a - numeric)
                scale = max(abs(a), abs(numeric))
                rel_error = abs_error / scale if scale > ZERO_GRADIENT_FLOOR else 0.0
                passed = rel_error <= tolerance or abs_error <= ZERO_GRADIENT_FLOOR
                entries.append(GradCheckEntry(
                    mode=mode, point=point, axis=label, analytic=a, numeric=numeric,
                    abs_error=abs_error, rel_error=rel_error, passed=passed,
                ))
                key = f"{mode}:{point}"
                per_point_abs[key] = max(per_point_abs.get(key, 0.0), abs_error)
                per_point_rel[key] = max(per_point_rel.get(key, 0.0), rel_error)

    checked = [e for e in entries if e.excluded is None]
    report = GradCheckReport(
        h=h,
        tolerance=tolerance,
        entries=entries,
        checked=len(checked),
        passed=sum(1 for e in checked if e.passed),
        failed=sum(1 for e in checked if not e.passed),
        excluded=len(entries) - len(checked),
        exclusion_counts=exclusion_counts,
        max_abs_error=max((e.abs_error for e in checked), default=0.0),
        max_rel_error=max((e.rel_error for e in checked), default=0.0),
        per_point_max_abs=per_point_abs,
        per_point_max_rel=per_point_rel,
    )
    if report.failed:
        logger.warning("Gradient check: %d of %d coordinates out of tolerance", report.failed, report.checked)
    return report


def refine(
    preds: PredictionSet,
    raster: HeadingRaster,
    cfg: Optional[LossConfig] = None,
    anchor_weight: float = 0.0,
    steps: int = 500,
    lr: float = 0.1,
    line_search: bool = True,
    max_halvings: int = 20,
) -> RefinementResult:
    """
    Gradient descent on yaw_loss plus an optional anchor to the starting points.

    The anchor term is anchor_weight times the mean squared displacement of the predicted
    points from where they started. Descent runs over segment displacements: each step
    subtracts lr times their gradient, so every segment turns towards its lane heading
    without bending its neighbours. With line_search the step is halved until the total
    does not increase, and the run stops as stalled when no halving is accepted.

    A segment exactly opposite its lane has no preferred turning direction; descent turns
    it clockwise, which lowers its deviation like any other rotation would.

    Args:
        lr: meters moved per unit gradient on the first try of each step
        max_halvings: line-search halvings before the step counts as stalled

    Raises:
        DivergedRefinement: if the total loss becomes non-finite
    """
    cfg = cfg or LossConfig()
    if anchor_weight < 0:
        raise ValueError(f"anchor_weight must be non-negative, got {anchor_weight}")
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")

    ego = preds.ego
    start = preds.stacked()
    m, n = start.shape[0], start.shape[1] - 1

    def terms_of(x: np.ndarray):
        yaw = _stacked_loss(x, raster, ego, cfg)
        anchor = anchor_weight * float(np.sum((x[:, 1:] - start[:, 1:]) ** 2)) / (m * n) if anchor_weight else 0.0
        return yaw + anchor, yaw, anchor

    def gradient(x: np.ndarray) -> np.ndarray:
        g = _stacked_gradient(x, raster, ego, cfg, antipodal_sign=1.0)
        if anchor_weight:
            g = g + 2.0 * anchor_weight * (x - start) / (m * n)
        return displacement_gradient(g)

    x = start.copy()
    total, yaw, anchor = terms_of(x)
    if not math.isfinite(total):
        raise DivergedRefinement(0)
    trace = [TraceRow(0, total, yaw, anchor)]
    stop_reason = "max_steps"

    for step in range(1, steps + 1):
        g = gradient(x)
        if not np.any(g):
            stop_reason = "converged"
            break
        # moving displacement j moves every later point with it
        direction = np.cumsum(g, axis=1)
        t = lr
        accepted = None
        for _ in range(max_halvings + 1 if line_search else 1):
            candidate = x.copy()
            candidate[:, 1:] -= t * direction
            candidate_terms = terms_of(candidate)
            if not math.isfinite(candidate_terms[0]):
                raise DivergedRefinement(step)
            if not line_search or candidate_terms[0] <= total:
                accepted = (candidate, candidate_terms)
                break
            t /= 2.0
        if accepted is None:
            stop_reason = "stalled"
            logger.warning("Line search found no descent at step %d after %d halvings", step, max_halvings)
            break
        x, (total, yaw, anchor) = accepted
        trace.append(TraceRow(step, total, yaw, anchor))

    logger.info("Refinement stopped (%s) after %d steps: yaw %.6f -> %.6f",
                stop_reason, len(trace) - 1, trace[0].yaw, trace[-1].yaw)
    return RefinementResult(preds.with_points(x), trace, stop_reason)
