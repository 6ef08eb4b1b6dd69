"""Shared scenes, rasters and prediction sets."""

import numpy as np
import pytest

from src.geometry import Pose, Trajectory
from src.heading_raster import RasterSpec, rasterize
from src.metrics import PredictionSet
from src.scene import SyntheticSpec, synth_scene


TEST_RESOLUTION = 0.5


def single_mode(points, ego=None, dt=0.5) -> PredictionSet:
    return PredictionSet((Trajectory(np.asarray(points, dtype=float), dt),), np.array([1.0]), ego or Pose())


def raster_for(scene, resolution=TEST_RESOLUTION, extents=(20.0, 80.0, 50.0, 50.0)):
    return rasterize(scene, RasterSpec.from_extents(scene.ego, extents, resolution))


@pytest.fixture(scope="session")
def uniform_scene():
    """One lane along +y through x=0, heading 0 everywhere, drivable strip 3.5 m wide."""
    return synth_scene(SyntheticSpec(kind="straight"))


@pytest.fixture(scope="session")
def uniform_raster(uniform_scene):
    return raster_for(uniform_scene)


@pytest.fixture(scope="session")
def four_way_scene():
    return synth_scene(SyntheticSpec(kind="four_way"))


@pytest.fixture(scope="session")
def four_way_raster(four_way_scene):
    return raster_for(four_way_scene)


@pytest.fixture(scope="session")
def arc_scene():
    return synth_scene(SyntheticSpec(kind="arc", num_lanes=2, radius=20.0, span_deg=90.0))


@pytest.fixture(scope="session")
def opposing_scene():
    """Two lanes: lane_0 at x=0 heading 0, lane_1 at x=3.5 heading 180."""
    return synth_scene(SyntheticSpec(kind="straight", num_lanes=2, lane_headings=[0.0, 180.0]))


@pytest.fixture
def forward_points():
    return np.stack([np.zeros(13), np.arange(13, dtype=float)], axis=1)


@pytest.fixture
def reversed_points():
    return np.stack([np.zeros(13), -np.arange(13, dtype=float)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
