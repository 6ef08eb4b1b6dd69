"""
File Models - Schemas of every JSON input and output.
Angles in files are degrees; positions are meters.
"""

from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.baselines import AgentState
from src.geometry import DEFAULT_DT, Pose, Trajectory
from src.heading_raster import RasterSpec
from src.metrics import PredictionSet
from src.scene import LanePolyline, PolygonRegion, RegionKind, Scene


XY = Tuple[float, float]


class PoseRecord(BaseModel):
    x: float = 0.0
    y: float = 0.0
    heading_deg: float = 0.0

    def to_domain(self) -> Pose:
        return Pose.from_values(self.x, self.y, self.heading_deg)

    @classmethod
    def from_domain(cls, pose: Pose) -> "PoseRecord":
        return cls(x=pose.position.x, y=pose.position.y, heading_deg=pose.heading.value)


class LaneRecord(BaseModel):
    id: str
    points: List[XY] = Field(min_length=2)
    headings_deg: List[float]


class RegionRecord(BaseModel):
    kind: Literal["intersection", "drivable"]
    vertices: List[XY] = Field(min_length=3)


class SceneFile(BaseModel):
    """A road scene: lanes with per-point headings, polygon regions and the ego pose"""
    lanes: List[LaneRecord]
    regions: List[RegionRecord] = []
    ego: PoseRecord = PoseRecord()

    def to_domain(self) -> Scene:
        lanes = [LanePolyline(id=lane.id, points=np.array(lane.points, dtype=float),
                              headings=np.array(lane.headings_deg, dtype=float)) for lane in self.lanes]
        regions = [PolygonRegion(np.array(r.vertices, dtype=float), RegionKind(r.kind)) for r in self.regions]
        return Scene(lanes=tuple(lanes), regions=tuple(regions), ego=self.ego.to_domain())

    @classmethod
    def from_domain(cls, scene: Scene) -> "SceneFile":
        return cls(
            lanes=[LaneRecord(id=lane.id, points=lane.points.tolist(), headings_deg=lane.headings.tolist())
                   for lane in scene.lanes],
            regions=[RegionRecord(kind=r.kind.value, vertices=r.vertices.tolist()) for r in scene.regions],
            ego=PoseRecord.from_domain(scene.ego),
        )


class ModeRecord(BaseModel):
    points: List[XY] = Field(min_length=2)
    probability: float


class StateRecord(BaseModel):
    speed: float
    acceleration: float = 0.0
    yaw_rate_deg_s: float = 0.0

    def to_domain(self) -> AgentState:
        return AgentState(speed=self.speed, acceleration=self.acceleration, yaw_rate=self.yaw_rate_deg_s)

    @classmethod
    def from_domain(cls, state: AgentState) -> "StateRecord":
        return cls(speed=state.speed, acceleration=state.acceleration, yaw_rate_deg_s=state.yaw_rate)


class PredictionSample(BaseModel):
    """One sample of a predictions file; modes may be empty when only state is given"""
    ego: PoseRecord = PoseRecord()
    dt: float = DEFAULT_DT
    modes: List[ModeRecord] = []
    gt: Optional[List[XY]] = None
    state: Optional[StateRecord] = None

    def predictions(self) -> PredictionSet:
        trajectories = tuple(Trajectory(np.array(m.points, dtype=float), self.dt) for m in self.modes)
        return PredictionSet(trajectories, np.array([m.probability for m in self.modes]), self.ego.to_domain())

    def ground_truth(self) -> Optional[Trajectory]:
        return Trajectory(np.array(self.gt, dtype=float), self.dt) if self.gt is not None else None

    @classmethod
    def from_domain(cls, preds: Optional[PredictionSet], gt: Optional[Trajectory] = None,
                    state: Optional[AgentState] = None, ego: Optional[Pose] = None) -> "PredictionSample":
        modes, dt = [], gt.dt if gt is not None else DEFAULT_DT
        if preds is not None:
            dt = preds.trajectories[0].dt
            ego = preds.ego
            modes = [ModeRecord(points=t.points.tolist(), probability=float(p))
                     for t, p in zip(preds.trajectories, preds.probabilities)]
        return cls(
            ego=PoseRecord.from_domain(ego or Pose()),
            dt=dt,
            modes=modes,
            gt=gt.points.tolist() if gt is not None else None,
            state=StateRecord.from_domain(state) if state is not None else None,
        )


class GroundTruthRecord(BaseModel):
    points: List[XY] = Field(min_length=2)
    dt: float = DEFAULT_DT

    def to_domain(self) -> Trajectory:
        return Trajectory(np.array(self.points, dtype=float), self.dt)


class RasterSidecar(BaseModel):
    """Geometry of a heading raster stored next to its PGM"""
    origin: PoseRecord = PoseRecord()
    behind_m: float
    ahead_m: float
    left_m: float
    right_m: float
    resolution: float
    width: int
    height: int
    encoding: Literal["heading_u8"] = "heading_u8"

    def to_spec(self) -> RasterSpec:
        return RasterSpec(origin_pose=self.origin.to_domain(), behind_m=self.behind_m, ahead_m=self.ahead_m,
                          left_m=self.left_m, right_m=self.right_m, resolution=self.resolution)

    @classmethod
    def from_spec(cls, spec: RasterSpec) -> "RasterSidecar":
        return cls(origin=PoseRecord.from_domain(spec.origin_pose), behind_m=spec.behind_m, ahead_m=spec.ahead_m,
                   left_m=spec.left_m, right_m=spec.right_m, resolution=spec.resolution,
                   width=spec.width, height=spec.height)
