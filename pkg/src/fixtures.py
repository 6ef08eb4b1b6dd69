"""
Fixtures Module - Deterministic trajectories and prediction batches on synthetic scenes.
Used by the synth command and by the test suite.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.baselines import AgentState
from src.errors import InvalidSpec
from src.geometry import DEFAULT_DT, Pose, Trajectory
from src.metrics import PredictionSet
from src.scene import Scene


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    preds: PredictionSet
    gt: Trajectory
    state: AgentState
    lane_id: str


def lane_following_trajectory(scene: Scene, lane_id: str, start_index: int = 0, steps: int = 12,
                              spacing_points: int = 2, dt: float = DEFAULT_DT) -> Tuple[Pose, Trajectory]:
    """
    Follow a lane's points from one of them.

    Returns:
        Tuple of (ego pose at the start point facing the lane heading, local-frame trajectory)

    Raises:
        InvalidSpec: if the lane is unknown or too short for the requested steps
    """
    lanes = {lane.id: lane for lane in scene.lanes}
    if lane_id not in lanes:
        raise InvalidSpec(f"Unknown lane '{lane_id}'")
    lane = lanes[lane_id]
    last = start_index + steps * spacing_points
    if start_index < 0 or spacing_points < 1 or last >= lane.points.shape[0]:
        raise InvalidSpec(f"Lane '{lane_id}' has {lane.points.shape[0]} points, cannot take {steps} steps of "
                          f"{spacing_points} from index {start_index}")
    start = lane.points[start_index]
    ego = Pose.from_values(start[0], start[1], lane.headings[start_index])
    local = ego.to_local_points(lane.points[start_index:last + 1:spacing_points])
    return ego, Trajectory(local, dt)


def wrong_way_trajectory(steps: int = 12, step_m: float = 1.0, drift_m: float = 0.0, dt: float = DEFAULT_DT) -> Trajectory:
    """Drive backwards along local -y, optionally drifting sideways by drift_m per step."""
    i = np.arange(steps + 1, dtype=float)
    return Trajectory(np.stack([i * drift_m, -i * step_m], axis=1), dt)


def constant_heading_trajectory(heading_deg: float, steps: int = 12, step_m: float = 1.0, dt: float = DEFAULT_DT) -> Trajectory:
    """Straight line at a fixed local heading."""
    h = math.radians(heading_deg)
    i = np.arange(steps + 1, dtype=float)
    return Trajectory(np.stack([i * step_m * math.sin(h), i * step_m * math.cos(h)], axis=1), dt)


def random_walk_trajectory(rng: np.random.Generator, steps: int = 12, step_m: float = 1.0, heading_deg: float = 0.0,
                           turn_sd_deg: float = 20.0, dt: float = DEFAULT_DT) -> Trajectory:
    """Correlated random walk; step lengths vary between half and one and a half step_m."""
    headings = np.radians(heading_deg + np.cumsum(rng.normal(0.0, turn_sd_deg, size=steps)))
    lengths = step_m * rng.uniform(0.5, 1.5, size=steps)
    moves = np.stack([lengths * np.sin(headings), lengths * np.cos(headings)], axis=1)
    return Trajectory(np.vstack([np.zeros((1, 2)), np.cumsum(moves, axis=0)]), dt)


def random_prediction_set(rng: np.random.Generator, gt: Trajectory, ego: Optional[Pose] = None, modes: int = 6,
                          noise_m: float = 1.0) -> PredictionSet:
    """Modes scattered around gt by accumulated Gaussian noise, with random normalized probabilities."""
    trajectories = []
    for _ in range(modes):
        noise = np.cumsum(rng.normal(0.0, noise_m, size=(gt.num_segments, 2)), axis=0)
        points = gt.points.copy()
        points[1:] += noise
        trajectories.append(Trajectory(points, gt.dt))
    weights = rng.uniform(0.05, 1.0, size=modes)
    return PredictionSet(tuple(trajectories), weights / weights.sum(), ego or Pose())


def synth_batch(scene: Scene, samples: int = 8, modes: int = 6, seed: int = 0, steps: int = 12,
                dt: float = DEFAULT_DT, noise_m: float = 1.0, spacing_points: int = 2) -> List[SyntheticSample]:
    """
    Ground-truth trajectories that follow randomly chosen lanes, plus noisy multimodal predictions.

    Raises:
        InvalidSpec: if no lane is long enough for the requested horizon
    """
    rng = np.random.default_rng(seed)
    needed = steps * spacing_points + 1
    usable = [lane for lane in scene.ordered_lanes if lane.points.shape[0] >= needed]
    if not usable:
        raise InvalidSpec(f"No lane has the {needed} points a {steps}-step trajectory needs")

    batch = []
    for _ in range(samples):
        lane = usable[int(rng.integers(len(usable)))]
        start = int(rng.integers(lane.points.shape[0] - needed + 1))
        ego, gt = lane_following_trajectory(scene, lane.id, start, steps, spacing_points, dt)
        preds = random_prediction_set(rng, gt, ego, modes, noise_m)
        batch.append(SyntheticSample(preds, gt, AgentState.from_trajectory(gt), lane.id))
    logger.info("Synthesized %d samples with %d modes", samples, modes)
    return batch
