import math

import numpy as np
import pytest

from src.baselines import (
    MODELS,
    AgentState,
    baseline_prediction_set,
    constant_acceleration_yaw,
    constant_velocity_yaw,
    constant_velocity_yaw_rate,
    physics_oracle,
    single_model_prediction_set,
)
from src.errors import InvalidSpec
from src.fixtures import lane_following_trajectory, synth_batch, wrong_way_trajectory
from src.geometry import Pose, Trajectory
from src.metrics import off_yaw_measure


def test_constant_velocity_goes_straight():
    traj = constant_velocity_yaw(AgentState(speed=2.0), horizon_steps=12, dt=0.5)
    expected = np.stack([np.zeros(13), np.arange(13.0)], axis=1)
    np.testing.assert_allclose(traj.points, expected, atol=1e-9)


def test_positive_yaw_rate_turns_clockwise():
    traj = constant_velocity_yaw_rate(AgentState(speed=5.0, yaw_rate=15.0), horizon_steps=12, dt=0.5)
    assert traj.points[-1, 0] > 0
    step = traj.points[-1] - traj.points[-2]
    # heading at the middle of the last interval
    assert math.degrees(math.atan2(step[0], step[1])) == pytest.approx(15.0 * 5.75, abs=0.5)


def test_deceleration_stops_instead_of_reversing():
    traj = constant_acceleration_yaw(AgentState(speed=2.0, acceleration=-2.0), horizon_steps=12, dt=0.5)
    assert np.all(np.diff(traj.points[:, 1]) >= 0)
    assert traj.points[-1, 1] == pytest.approx(1.0, abs=1e-6)


def test_state_from_trajectory():
    state = AgentState.from_trajectory(Trajectory(np.stack([np.zeros(5), np.arange(5.0)], axis=1), 0.5))
    assert state.speed == pytest.approx(2.0)
    assert state.acceleration == pytest.approx(0.0)
    assert state.yaw_rate == pytest.approx(0.0)


def test_state_validation():
    with pytest.raises(ValueError):
        AgentState(speed=-1.0)
    with pytest.raises(ValueError):
        AgentState(speed=1.0, yaw_rate=math.nan)


def test_oracle_recovers_generating_model():
    state = AgentState(speed=4.0, yaw_rate=-10.0)
    gt = constant_velocity_yaw_rate(state, 12, 0.5)
    oracle = physics_oracle(state, gt)
    np.testing.assert_allclose(oracle.points, gt.points, atol=1e-12)


def test_baseline_prediction_set():
    preds = baseline_prediction_set(AgentState(speed=3.0, acceleration=0.5, yaw_rate=5.0), Pose(), 8, 0.5)
    assert preds.num_modes == len(MODELS) == 4
    np.testing.assert_allclose(preds.probabilities, 0.25)
    assert len(preds.trajectories[0]) == 9


def test_single_model_prediction_set():
    state = AgentState(speed=3.0)
    assert single_model_prediction_set("cvy", state, Pose()).num_modes == 1
    with pytest.raises(ValueError):
        single_model_prediction_set("oracle", state, Pose())
    with pytest.raises(ValueError):
        single_model_prediction_set("kalman", state, Pose())


def test_lane_following_is_aligned(uniform_scene, uniform_raster):
    ego, gt = lane_following_trajectory(uniform_scene, "lane_0", start_index=40, steps=12)
    assert ego.position.y == pytest.approx(0.0)
    np.testing.assert_allclose(gt.points[:, 1], np.arange(13.0), atol=1e-9)
    assert off_yaw_measure(gt, uniform_raster, ego) == 0.0


def test_lane_following_rejects_bad_requests(uniform_scene):
    with pytest.raises(InvalidSpec):
        lane_following_trajectory(uniform_scene, "lane_9")
    with pytest.raises(InvalidSpec):
        lane_following_trajectory(uniform_scene, "lane_0", start_index=195, steps=12)


def test_wrong_way_trajectory_shape():
    traj = wrong_way_trajectory(steps=6, drift_m=0.1)
    assert traj.num_segments == 6
    np.testing.assert_allclose(traj.points[-1], [0.6, -6.0])


def test_synth_batch_is_deterministic(arc_scene):
    a = synth_batch(arc_scene, samples=3, modes=4, seed=11)
    b = synth_batch(arc_scene, samples=3, modes=4, seed=11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.preds.stacked(), y.preds.stacked())
        np.testing.assert_array_equal(x.gt.points, y.gt.points)
        assert x.lane_id == y.lane_id
    assert all(len(s.preds.trajectories[0]) == len(s.gt) for s in a)


def test_synth_batch_needs_long_lanes(arc_scene):
    with pytest.raises(InvalidSpec):
        synth_batch(arc_scene, steps=500)
