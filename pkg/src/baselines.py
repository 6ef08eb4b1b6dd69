"""
Baselines Module - Physics-based trajectory predictors.
Constant velocity / acceleration with constant yaw or yaw rate, rolled out in the agent's local frame.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from src.geometry import DEFAULT_DT, Pose, Trajectory, segment_headings_deg, signed_residual_deg
from src.metrics import PredictionSet, sequential_mean


SUBSTEPS = 10


@dataclass(frozen=True)
class AgentState:
    """Kinematic state at the current time step. yaw_rate is in degrees per second, clockwise positive."""
    speed: float
    acceleration: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        for name in ("speed", "acceleration", "yaw_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"AgentState.{name} must be finite")
        if self.speed < 0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "AgentState":
        """Finite-difference estimate from the first two or three points."""
        pts = traj.points
        dt = traj.dt
        first = float(np.hypot(*(pts[1] - pts[0])))
        speed = first / dt
        if len(traj) < 3:
            return cls(speed=speed)
        second = float(np.hypot(*(pts[2] - pts[1])))
        headings, stationary = segment_headings_deg(pts[:3])
        turn = 0.0 if stationary.any() else float(signed_residual_deg(headings[1], headings[0]))
        return cls(speed=speed, acceleration=(second - first) / (dt * dt), yaw_rate=turn / dt)


def _rollout(state: AgentState, horizon_steps: int, dt: float, accelerate: bool, turn: bool) -> Trajectory:
    # midpoint integration; speed is clamped at zero so decelerating agents stop instead of reversing
    acceleration = state.acceleration if accelerate else 0.0
    yaw_rate = math.radians(state.yaw_rate) if turn else 0.0
    ds = dt / SUBSTEPS
    x = y = t = 0.0
    points = [(0.0, 0.0)]
    for _ in range(horizon_steps):
        for _ in range(SUBSTEPS):
            mid = t + ds / 2.0
            speed = max(state.speed + acceleration * mid, 0.0)
            heading = yaw_rate * mid
            x += speed * math.sin(heading) * ds
            y += speed * math.cos(heading) * ds
            t += ds
        points.append((x, y))
    return Trajectory(np.array(points), dt)


def constant_velocity_yaw(state: AgentState, horizon_steps: int = 12, dt: float = DEFAULT_DT) -> Trajectory:
    """Straight ahead at the current speed."""
    return _rollout(state, horizon_steps, dt, accelerate=False, turn=False)


def constant_velocity_yaw_rate(state: AgentState, horizon_steps: int = 12, dt: float = DEFAULT_DT) -> Trajectory:
    """Current speed, turning at the current yaw rate."""
    return _rollout(state, horizon_steps, dt, accelerate=False, turn=True)


def constant_acceleration_yaw(state: AgentState, horizon_steps: int = 12, dt: float = DEFAULT_DT) -> Trajectory:
    """Straight ahead, speeding up or braking to a stop at the current acceleration."""
    return _rollout(state, horizon_steps, dt, accelerate=True, turn=False)


def constant_acceleration_yaw_rate(state: AgentState, horizon_steps: int = 12, dt: float = DEFAULT_DT) -> Trajectory:
    """Current acceleration and yaw rate together."""
    return _rollout(state, horizon_steps, dt, accelerate=True, turn=True)


Predictor = Callable[[AgentState, int, float], Trajectory]

MODELS: Dict[str, Predictor] = {
    "cvy": constant_velocity_yaw,
    "cvyr": constant_velocity_yaw_rate,
    "cay": constant_acceleration_yaw,
    "cayr": constant_acceleration_yaw_rate,
}


def _ade(pred: Trajectory, gt: Trajectory) -> float:
    diff = pred.points[1:] - gt.points[1:]
    return sequential_mean(np.hypot(diff[:, 0], diff[:, 1]))


def physics_oracle(state: AgentState, gt: Trajectory, horizon_steps: Optional[int] = None, dt: Optional[float] = None) -> Trajectory:
    """The physics baseline closest to the ground truth by ADE. Ties go to the earlier model in MODELS."""
    horizon_steps = horizon_steps or gt.num_segments
    dt = dt or gt.dt
    gt = gt.truncated(horizon_steps)
    best, best_ade = None, math.inf
    for predictor in MODELS.values():
        candidate = predictor(state, horizon_steps, dt)
        ade = _ade(candidate, gt)
        if ade < best_ade:
            best, best_ade = candidate, ade
    return best


def baseline_prediction_set(state: AgentState, ego: Pose, horizon_steps: int = 12, dt: float = DEFAULT_DT) -> PredictionSet:
    """All four physics models as one equally weighted multimodal prediction."""
    trajectories = tuple(predictor(state, horizon_steps, dt) for predictor in MODELS.values())
    return PredictionSet(trajectories, np.full(len(trajectories), 1.0 / len(trajectories)), ego)


def single_model_prediction_set(model: str, state: AgentState, ego: Pose, horizon_steps: int = 12,
                                dt: float = DEFAULT_DT, gt: Optional[Trajectory] = None) -> PredictionSet:
    """
    One-mode prediction from a named model, or the oracle when model is "oracle".

    Raises:
        ValueError: for an unknown model name, or the oracle without ground truth
    """
    if model == "oracle":
        if gt is None:
            raise ValueError("The physics oracle needs ground truth")
        traj = physics_oracle(state, gt, horizon_steps, dt)
    elif model in MODELS:
        traj = MODELS[model](state, horizon_steps, dt)
    else:
        raise ValueError(f"Unknown baseline model '{model}', expected one of {sorted(MODELS) + ['oracle']}")
    return PredictionSet((traj,), np.array([1.0]), ego)
