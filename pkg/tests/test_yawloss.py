import math

import numpy as np
import pytest

from src.fixtures import random_walk_trajectory, wrong_way_trajectory
from src.geometry import Pose, Trajectory
from src.heading_raster import RasterSpec, rasterize
from src.metrics import PredictionSet, off_yaw_sample, segment_terms
from src.scene import LanePolyline, PolygonRegion, Scene, SyntheticSpec, synth_scene
from src.yawloss import LossConfig, displacement_gradient, grad_check, refine, yaw_loss, yaw_loss_grad
from models.report import GradCheckReport

from tests.conftest import raster_for, single_mode


def random_sets(rng, ego, count=8, modes=3):
    sets = []
    for _ in range(count):
        trajectories = tuple(
            random_walk_trajectory(rng, steps=12, heading_deg=float(rng.uniform(0.0, 360.0)), turn_sd_deg=30.0)
            for _ in range(modes)
        )
        sets.append(PredictionSet(trajectories, np.full(modes, 1.0 / modes), ego))
    return sets


@pytest.fixture(scope="module")
def gradient_cases():
    rng = np.random.default_rng(2024)
    cases = []
    for spec, ego in [
        (SyntheticSpec(kind="straight", num_lanes=3, lane_headings=[0.0, 180.0, 20.0]), Pose.from_values(1.0, 10.0, 15.0)),
        (SyntheticSpec(kind="arc", num_lanes=2, radius=20.0, span_deg=120.0), Pose.from_values(8.0, 12.0, 60.0)),
        (SyntheticSpec(kind="four_way"), Pose.from_values(0.3, 22.0, 0.0)),
    ]:
        raster = raster_for(synth_scene(spec))
        cases += [(preds, raster) for preds in random_sets(rng, ego)]
    return cases


@pytest.fixture
def lateral_raster():
    """Lane along the x axis with heading 90 everywhere."""
    xs = np.arange(-10.0, 10.5, 0.5)
    lane = LanePolyline("lane", np.stack([xs, np.zeros_like(xs)], axis=1), np.full(xs.shape[0], 90.0))
    spec = RasterSpec(origin_pose=Pose(), behind_m=5.0, ahead_m=5.0, left_m=5.0, right_m=5.0, resolution=0.5)
    return rasterize(Scene(lanes=(lane,)), spec)


def test_loss_matches_metric(uniform_raster, forward_points, reversed_points):
    preds = PredictionSet((Trajectory(forward_points), Trajectory(reversed_points)), np.array([0.3, 0.7]))
    assert yaw_loss(preds, uniform_raster) == off_yaw_sample(preds, uniform_raster)
    assert yaw_loss(preds, uniform_raster, LossConfig(scale=2.0)) == 2.0 * off_yaw_sample(preds, uniform_raster)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=180.0)
    with pytest.raises(ValueError):
        LossConfig(scale=-1.0)


def test_single_segment_gradient(lateral_raster):
    preds = single_mode([[0.0, 0.0], [0.0, 1.0]])
    grad = yaw_loss_grad(preds, lateral_raster)[0].values
    np.testing.assert_allclose(grad[1], [-1.0, 0.0], atol=1e-12)
    assert np.all(grad[0] == 0.0)


def test_aligned_trajectory_has_zero_gradient(uniform_raster, forward_points):
    assert yaw_loss_grad(single_mode(forward_points), uniform_raster)[0].max_abs == 0.0


def test_antipodal_segments_have_zero_gradient(uniform_raster, reversed_points):
    assert yaw_loss_grad(single_mode(reversed_points), uniform_raster)[0].max_abs == 0.0


def test_modes_are_separable(arc_scene, rng):
    raster = raster_for(arc_scene)
    ego = Pose.from_values(8.0, 12.0, 60.0)
    a = random_walk_trajectory(rng, heading_deg=120.0)
    b = random_walk_trajectory(rng, heading_deg=250.0)
    pair = yaw_loss_grad(PredictionSet((a, b), np.array([0.5, 0.5]), ego), raster)
    alone = yaw_loss_grad(PredictionSet((a,), np.array([1.0]), ego), raster)
    np.testing.assert_allclose(2.0 * pair[0].values, alone[0].values, rtol=1e-12, atol=1e-15)


def test_intersection_segments_pass_no_gradient(four_way_raster):
    local = np.stack([np.zeros(13), 2.0 * np.arange(13)], axis=1)
    preds = single_mode(local, ego=Pose.from_values(-12.0, 29.0, 90.0))
    cfg = LossConfig(alpha=0.0)
    terms = segment_terms(local, four_way_raster, preds.ego, cfg.alpha)
    assert terms.intersection[4:8].all()
    grad = yaw_loss_grad(preds, four_way_raster, cfg)[0].values
    assert np.all(grad[5:8] == 0.0)
    # collinear equal segments cancel at interior points; 4 and 8 border the masked run
    assert np.all(grad[1:4] == 0.0)
    assert np.any(grad[4] != 0.0)
    assert np.any(grad[8] != 0.0)


def test_gradient_matches_finite_differences(gradient_cases):
    reports = [grad_check(preds, raster) for preds, raster in gradient_cases]
    for report in reports:
        assert report.failed == 0, report.summary_line()
    total = GradCheckReport.merged(reports, h=1e-4, tolerance=1e-4)
    assert total.checked + total.excluded >= 1000
    assert total.excluded_fraction < 0.05
    assert sum(total.exclusion_counts.values()) == total.excluded


def test_gradient_matches_with_smooth_gate(gradient_cases):
    cfg = LossConfig(smooth_gate_width=30.0, scale=0.5)
    for preds, raster in gradient_cases[:6]:
        report = grad_check(preds, raster, cfg)
        assert report.all_passed, report.summary_line()


def test_step_size_sweep(gradient_cases):
    preds, raster = gradient_cases[0]
    coarse = grad_check(preds, raster, h=1e-3)
    fine = grad_check(preds, raster, h=1e-4)
    assert coarse.max_abs_error > fine.max_abs_error
    assert grad_check(preds, raster, h=1e-5).all_passed


def test_grad_check_reports_every_coordinate(gradient_cases):
    preds, raster = gradient_cases[0]
    report = grad_check(preds, raster)
    assert len(report.entries) == preds.num_modes * 12 * 2
    assert report.checked + report.excluded == len(report.entries)
    assert sum(report.exclusion_counts.values()) == report.excluded
    assert set(report.exclusion_counts) <= {"gate", "antipodal", "cell_edge", "stationary"}


def test_grad_check_flags_stationary_segments(uniform_raster):
    preds = single_mode([[0.0, 0.0], [0.3, 1.1], [0.3, 1.1], [0.9, 2.3]])
    report = grad_check(preds, uniform_raster)
    assert report.exclusion_counts.get("stationary", 0) == 4


def test_refine_turns_wrong_way_trajectory_around(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6, drift_m=0.1),), np.array([1.0]))
    result = refine(preds, uniform_raster, LossConfig(smooth_gate_width=90.0), steps=500)
    totals = [row.total for row in result.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert result.initial_loss > 0
    assert result.ratio < 0.1
    assert result.preds.stacked()[0, 0].tolist() == [0.0, 0.0]


def test_refine_leaves_aligned_trajectory(uniform_raster, forward_points):
    preds = single_mode(forward_points)
    result = refine(preds, uniform_raster)
    assert result.stop_reason == "converged"
    np.testing.assert_array_equal(result.preds.stacked(), preds.stacked())
    assert result.ratio == 0.0


def test_refine_wrong_way_with_hard_gate(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6, drift_m=0.1),), np.array([1.0]))
    result = refine(preds, uniform_raster, LossConfig(), steps=500)
    totals = [row.total for row in result.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert result.ratio < 0.1
    assert result.stop_reason == "converged"


def test_refine_turns_fully_reversed_trajectory(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6),), np.array([1.0]))
    assert yaw_loss(preds, uniform_raster) == pytest.approx(math.pi)
    assert yaw_loss_grad(preds, uniform_raster)[0].max_abs == 0.0

    result = refine(preds, uniform_raster, steps=500)
    assert len(result.trace) > 1
    assert result.trace[1].total < result.trace[0].total
    assert result.ratio < 0.1
    assert result.stop_reason == "converged"


def test_displacement_gradient_keeps_segments_apart(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6, drift_m=0.1),), np.array([1.0]))
    point_grad = np.stack([g.values for g in yaw_loss_grad(preds, uniform_raster)])
    # interior points of a straight line cancel; only the endpoint moves
    np.testing.assert_allclose(point_grad[0, 1:6], 0.0, atol=1e-12)
    assert np.all(point_grad[0, 6] != 0.0)

    per_segment = displacement_gradient(point_grad)
    assert per_segment.shape == (1, 6, 2)
    np.testing.assert_allclose(per_segment[0], np.repeat(per_segment[0, :1], 6, axis=0), rtol=1e-9)
    np.testing.assert_allclose(per_segment[0, -1], point_grad[0, 6], rtol=1e-12)


def test_refine_with_anchor(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6, drift_m=0.1),), np.array([1.0]))
    result = refine(preds, uniform_raster, LossConfig(smooth_gate_width=90.0), anchor_weight=0.05, steps=50)
    assert result.trace[0].anchor == 0.0
    assert result.trace[-1].total <= result.trace[0].total
    assert all(row.anchor >= 0.0 for row in result.trace)


def test_refine_without_line_search_runs_fixed_steps(uniform_raster):
    preds = PredictionSet((wrong_way_trajectory(steps=6, drift_m=0.1),), np.array([1.0]))
    result = refine(preds, uniform_raster, LossConfig(smooth_gate_width=90.0), steps=5, line_search=False)
    assert len(result.trace) == 6
    assert result.stop_reason == "max_steps"


def test_refine_rejects_bad_settings(uniform_raster, forward_points):
    with pytest.raises(ValueError):
        refine(single_mode(forward_points), uniform_raster, lr=0.0)
    with pytest.raises(ValueError):
        refine(single_mode(forward_points), uniform_raster, anchor_weight=-1.0)


def test_translation_by_whole_cells(arc_scene, rng):
    shift = np.array([3.0, -2.0])
    moved = Scene(
        lanes=tuple(LanePolyline(lane.id, lane.points + shift, lane.headings) for lane in arc_scene.lanes),
        regions=tuple(PolygonRegion(region.vertices + shift, region.kind) for region in arc_scene.regions),
        ego=Pose.from_values(arc_scene.ego.position.x + shift[0], arc_scene.ego.position.y + shift[1],
                             arc_scene.ego.heading.value),
    )
    modes = tuple(random_walk_trajectory(rng, heading_deg=h) for h in (100.0, 200.0))
    here = PredictionSet(modes, np.array([0.5, 0.5]), Pose.from_values(8.0, 12.0, 60.0))
    there = PredictionSet(modes, np.array([0.5, 0.5]), Pose.from_values(8.0 + shift[0], 12.0 + shift[1], 60.0))
    raster_here, raster_there = raster_for(arc_scene), raster_for(moved)

    assert yaw_loss(there, raster_there) == pytest.approx(yaw_loss(here, raster_here), rel=1e-9, abs=1e-12)
    for a, b in zip(yaw_loss_grad(here, raster_here), yaw_loss_grad(there, raster_there)):
        np.testing.assert_allclose(b.values, a.values, rtol=1e-9, atol=1e-12)
