import math

import numpy as np
import pytest

from src.errors import BatchShapeMismatch, DegenerateTrajectory, EmptyBatch, MissingDrivableArea
from src.fixtures import constant_heading_trajectory, random_walk_trajectory, synth_batch
from src.geometry import Pose, Trajectory
from src.heading_raster import BIN_WIDTH_DEG
from src.metrics import (
    EvalConfig,
    PredictionSet,
    alpha_sweep,
    evaluate_batch,
    gate,
    is_miss,
    min_ade_k,
    min_fde_k,
    miss_rate_k,
    mode_measures,
    off_road_rate,
    off_yaw_event_fraction,
    off_yaw_measure,
    off_yaw_rate,
    off_yaw_sample,
    segment_terms,
    top_k_indices,
)
from src.scene import LanePolyline, Scene, SyntheticSpec, synth_scene

from tests.conftest import raster_for, single_mode


def two_modes(a, b, probabilities=(0.5, 0.5), ego=None):
    trajectories = (Trajectory(np.asarray(a, dtype=float)), Trajectory(np.asarray(b, dtype=float)))
    return PredictionSet(trajectories, np.array(probabilities), ego or Pose())


def test_forward_and_reversed_separation(uniform_scene, uniform_raster, forward_points, reversed_points):
    forward = single_mode(forward_points)
    backward = single_mode(reversed_points)
    assert off_yaw_sample(forward, uniform_raster) == 0.0
    assert off_yaw_sample(backward, uniform_raster) == pytest.approx(math.pi, abs=1e-9)
    assert off_road_rate(forward, uniform_scene) == 0.0
    assert off_road_rate(backward, uniform_scene) == 0.0


@pytest.mark.parametrize("heading, expected", [(30.0, 0.0), (50.0, math.radians(50.0))])
def test_threshold_semantics(uniform_raster, heading, expected):
    traj = constant_heading_trajectory(heading)
    assert off_yaw_measure(traj, uniform_raster, Pose()) == pytest.approx(expected, abs=1e-9)


def test_threshold_boundary_is_not_penalized(uniform_raster):
    diagonal = Trajectory(np.stack([np.arange(13.0), np.arange(13.0)], axis=1))
    assert off_yaw_measure(diagonal, uniform_raster, Pose()) == 0.0
    assert off_yaw_measure(diagonal, uniform_raster, Pose(), alpha=44.0) == pytest.approx(math.pi / 4, abs=1e-9)


def test_intersection_masking(four_way_raster):
    local = np.stack([np.zeros(13), 2.0 * np.arange(13)], axis=1)
    crossing = single_mode(local, ego=Pose.from_values(-12.0, 29.0, 90.0))
    outside = single_mode(local, ego=Pose.from_values(-12.0, 9.0, 90.0))

    terms = segment_terms(local, four_way_raster, crossing.ego, 45.0)
    assert terms.intersection.sum() > 0
    assert np.all(terms.values[terms.intersection] == 0.0)

    inside_value = off_yaw_sample(crossing, four_way_raster)
    outside_value = off_yaw_sample(outside, four_way_raster)
    assert inside_value < outside_value
    assert outside_value == pytest.approx(math.pi / 2, abs=1e-9)


def test_off_map_and_stationary_segments_contribute_nothing(uniform_raster):
    far = np.stack([np.zeros(3), 500.0 + np.arange(3.0)], axis=1)
    terms = segment_terms(far, uniform_raster, Pose(), 45.0)
    assert terms.off_map.all()
    assert np.all(terms.values == 0.0)

    parked = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, -1.0]])
    terms = segment_terms(parked, uniform_raster, Pose(), 45.0)
    assert terms.stationary.tolist() == [True, False]
    assert off_yaw_measure(Trajectory(parked), uniform_raster, Pose()) == pytest.approx(math.pi / 2)


def test_off_yaw_needs_two_points(uniform_raster):
    with pytest.raises(DegenerateTrajectory):
        segment_terms(np.zeros((1, 2)), uniform_raster, Pose(), 45.0)


def test_sample_is_mean_over_modes(uniform_raster, forward_points, reversed_points):
    preds = two_modes(forward_points, reversed_points)
    assert mode_measures(preds, uniform_raster) == [0.0, pytest.approx(math.pi)]
    assert off_yaw_sample(preds, uniform_raster) == pytest.approx(math.pi / 2)
    assert off_yaw_event_fraction(preds, uniform_raster) == 0.5


def test_off_yaw_rate(uniform_raster, forward_points, reversed_points):
    aligned = single_mode(forward_points)
    mixed = two_modes(forward_points, reversed_points)
    assert off_yaw_rate([(aligned, uniform_raster)]) == 0.0
    assert off_yaw_rate([(aligned, uniform_raster), (mixed, uniform_raster)]) == pytest.approx(math.pi / 4)
    with pytest.raises(EmptyBatch):
        off_yaw_rate([])


def test_alpha_never_increases_measure(arc_scene, rng):
    raster = raster_for(arc_scene)
    samples = []
    for _ in range(5):
        traj = random_walk_trajectory(rng, steps=12, heading_deg=float(rng.uniform(0, 360)), turn_sd_deg=40.0)
        samples.append((PredictionSet((traj,), np.array([1.0]), Pose.from_values(10.0, 10.0, 0.0)), raster))
    sweep = alpha_sweep(samples, [0.0, 15.0, 30.0, 45.0, 60.0, 90.0, 135.0, 179.0])
    values = list(sweep.values())
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_measure_invariant_under_rigid_rotation(reversed_points):
    plain = synth_scene(SyntheticSpec(kind="straight"))
    rotated = synth_scene(SyntheticSpec(kind="straight", rotation_deg=40.0))
    traj = Trajectory(reversed_points)
    base = off_yaw_measure(traj, raster_for(plain), plain.ego)
    turned = off_yaw_measure(traj, raster_for(rotated), rotated.ego)
    assert turned == pytest.approx(base, abs=math.radians(BIN_WIDTH_DEG / 2))


def test_gate_hard_and_smooth():
    value, slope = gate(np.array([30.0, 50.0]), 45.0)
    assert value[0] == 0.0 and value[1] == pytest.approx(math.radians(50.0))
    assert slope.tolist() == [0.0, 1.0]
    value, _ = gate(np.array([45.0, 55.0, 100.0]), 45.0, width=20.0)
    assert value[0] == 0.0
    assert value[1] == pytest.approx(0.5 * math.radians(55.0))
    assert value[2] == pytest.approx(math.radians(100.0))


def test_min_ade_fde_offsets(forward_points):
    gt = Trajectory(forward_points)
    shifted = forward_points.copy()
    shifted[1:, 0] += 1.0
    assert min_ade_k(single_mode(forward_points), gt, 1) == 0.0
    assert min_ade_k(single_mode(shifted), gt, 1) == pytest.approx(1.0)
    assert min_fde_k(single_mode(shifted), gt, 1) == pytest.approx(1.0)


def test_min_ade_uses_most_probable_modes(forward_points):
    gt = Trajectory(forward_points)
    wrong = forward_points.copy()
    wrong[1:, 0] += 5.0
    preds = two_modes(wrong, forward_points, probabilities=(0.9, 0.1))
    assert min_ade_k(preds, gt, 1) == pytest.approx(5.0)
    assert min_ade_k(preds, gt, 2) == 0.0


def test_min_fde_only_counts_final_point(forward_points):
    gt = Trajectory(forward_points)
    detour = forward_points.copy()
    detour[1:-1, 0] += 3.0
    assert min_fde_k(single_mode(detour), gt, 1) == 0.0
    assert min_ade_k(single_mode(detour), gt, 1) > 0.0


def test_miss_rate(forward_points):
    gt = Trajectory(forward_points)
    far = forward_points.copy()
    far[1:, 0] += 10.0
    hit, miss = single_mode(forward_points), single_mode(far)
    assert miss_rate_k([(hit, gt)], 1) == 0.0
    assert miss_rate_k([(miss, gt)], 1) == 1.0
    assert miss_rate_k([(hit, gt), (miss, gt)], 1) == 0.5
    with pytest.raises(EmptyBatch):
        miss_rate_k([], 1)


def test_miss_uses_max_displacement(forward_points):
    gt = Trajectory(forward_points)
    blip = forward_points.copy()
    blip[6, 0] += 2.5
    assert is_miss(single_mode(blip), gt, 1)
    assert not is_miss(single_mode(blip), gt, 1, threshold=3.0)


def test_misaligned_ground_truth_rejected(forward_points):
    with pytest.raises(BatchShapeMismatch):
        min_ade_k(single_mode(forward_points), Trajectory(forward_points[:5]), 1)


def test_off_road_counts_points(uniform_scene, forward_points):
    stray = forward_points.copy()
    stray[7:, 0] = 10.0
    preds = two_modes(forward_points, stray)
    assert off_road_rate(preds, uniform_scene) == pytest.approx(6 / 24)

    outside = forward_points.copy()
    outside[1:, 0] = 10.0
    assert off_road_rate(single_mode(outside), uniform_scene) == 1.0


def test_off_road_needs_drivable_area(forward_points):
    lane = LanePolyline("lane", np.array([[0.0, 0.0], [0.0, 1.0]]), np.array([0.0, 0.0]))
    with pytest.raises(MissingDrivableArea):
        off_road_rate(single_mode(forward_points), Scene(lanes=(lane,)))


def test_top_k_ties_and_clamp():
    order, clamped = top_k_indices(np.array([0.25, 0.5, 0.25]), 2)
    assert order.tolist() == [1, 0]
    assert not clamped
    order, clamped = top_k_indices(np.array([0.25, 0.5, 0.25]), 10)
    assert order.tolist() == [1, 0, 2]
    assert clamped
    with pytest.raises(ValueError):
        top_k_indices(np.array([1.0]), 0)


def test_prediction_set_validation(forward_points):
    with pytest.raises(ValueError):
        two_modes(forward_points, forward_points, probabilities=(0.7, 0.7))
    with pytest.raises(ValueError):
        two_modes(forward_points, forward_points[:5])


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(alpha=180.0)
    with pytest.raises(ValueError):
        EvalConfig(k_values=(0,))
    with pytest.raises(ValueError):
        EvalConfig(miss_threshold=0.0)


@pytest.fixture(scope="module")
def arc_batch():
    scene = synth_scene(SyntheticSpec(kind="arc", num_lanes=2, radius=20.0, span_deg=90.0))
    raster = raster_for(scene)
    batch = synth_batch(scene, samples=10, modes=10, seed=5)
    return scene, raster, batch


def _evaluate(scene, raster, batch, **kwargs):
    return evaluate_batch(
        [s.preds for s in batch], [s.gt for s in batch], [scene] * len(batch), [raster] * len(batch), **kwargs
    )


def test_metrics_non_increasing_in_k(arc_batch):
    report = _evaluate(*arc_batch)
    for sample in report.samples:
        for name in ("min_ade", "min_fde", "miss_rate"):
            series = [sample.values[f"{name}_{k}"] for k in (1, 5, 10)]
            assert series[0] >= series[1] >= series[2]


def test_aggregate_equals_naive_mean(arc_batch):
    report = _evaluate(*arc_batch)
    for key in report.metric_keys:
        total = 0.0
        for sample in report.samples:
            total += sample.values[key]
        assert report.aggregate[key] == total / len(report.samples)


def test_aggregate_independent_of_order(arc_batch):
    scene, raster, batch = arc_batch
    forward = _evaluate(scene, raster, batch)
    backward = _evaluate(scene, raster, list(reversed(batch)))
    for key in forward.metric_keys:
        assert backward.aggregate[key] == pytest.approx(forward.aggregate[key], rel=1e-12, abs=1e-15)


def test_evaluate_is_deterministic_across_workers(arc_batch):
    scene, raster, batch = arc_batch
    assert _evaluate(scene, raster, batch).to_json() == _evaluate(scene, raster, batch, workers=4).to_json()


def test_single_sample_report(uniform_scene, uniform_raster, reversed_points):
    preds = single_mode(reversed_points)
    report = evaluate_batch([preds], [Trajectory(reversed_points)], [uniform_scene], [uniform_raster])
    assert report.aggregate == report.samples[0].values
    assert report.aggregate["off_yaw_rate"] == pytest.approx(math.pi, abs=1e-9)
    assert report.aggregate["off_road_rate"] == 0.0
    assert report.aggregate["min_ade_1"] == 0.0
    assert report.samples[0].k_clamped == [5, 10]


def test_report_keeps_original_sample_indices(uniform_scene, uniform_raster, forward_points):
    preds = single_mode(forward_points)
    report = evaluate_batch([preds], [Trajectory(forward_points)], [uniform_scene], [uniform_raster],
                            sample_indices=[3], excluded_samples=[0, 1, 2])
    assert report.samples[0].sample_index == 3
    assert report.excluded_samples == [0, 1, 2]


def test_batch_validation(uniform_scene, uniform_raster, forward_points):
    preds = single_mode(forward_points)
    with pytest.raises(BatchShapeMismatch):
        evaluate_batch([preds, preds], [Trajectory(forward_points)], [uniform_scene], [uniform_raster])
    with pytest.raises(EmptyBatch):
        evaluate_batch([], [], [], [])


def test_intersection_counts_reported(four_way_scene, four_way_raster):
    local = np.stack([np.zeros(13), 2.0 * np.arange(13)], axis=1)
    preds = single_mode(local, ego=Pose.from_values(-12.0, 29.0, 90.0))
    report = evaluate_batch([preds], [Trajectory(local)], [four_way_scene], [four_way_raster])
    assert report.total_intersection_midpoints > 0
    assert report.aggregate["off_yaw_rate"] == 0.0
