"""
Report Models - Evaluation and gradient-check reports as persisted JSON.
"""

import json
from typing import Dict, List, Optional

from pydantic import BaseModel


def _naive_mean(values: List[float]) -> float:
    return sum(values) / len(values)


class SampleMetrics(BaseModel):
    """Metric values for one sample plus the masking diagnostics behind the off-yaw value"""
    sample_index: int
    values: Dict[str, float]
    intersection_midpoints: int = 0
    off_map_midpoints: int = 0
    stationary_segments: int = 0
    k_clamped: List[int] = []


class EvalReport(BaseModel):
    """Per-sample rows and their arithmetic means"""
    config: dict
    metric_keys: List[str]
    samples: List[SampleMetrics]
    aggregate: Dict[str, float]
    total_intersection_midpoints: int = 0
    total_off_map_midpoints: int = 0
    total_stationary_segments: int = 0
    excluded_samples: List[int] = []

    @classmethod
    def from_samples(cls, config: dict, metric_keys: List[str], samples: List[SampleMetrics],
                     excluded_samples: Optional[List[int]] = None) -> "EvalReport":
        aggregate = {key: _naive_mean([s.values[key] for s in samples]) for key in metric_keys}
        return cls(
            config=config,
            metric_keys=metric_keys,
            samples=samples,
            aggregate=aggregate,
            total_intersection_midpoints=sum(s.intersection_midpoints for s in samples),
            total_off_map_midpoints=sum(s.off_map_midpoints for s in samples),
            total_stationary_segments=sum(s.stationary_segments for s in samples),
            excluded_samples=excluded_samples or [],
        )

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON storage"""
        return self.model_dump(mode="json")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


class GradCheckEntry(BaseModel):
    """One checked coordinate"""
    mode: int
    point: int
    axis: str  # "x" or "y"
    analytic: float
    numeric: Optional[float] = None
    abs_error: Optional[float] = None
    rel_error: Optional[float] = None
    excluded: Optional[str] = None  # gate, antipodal, cell_edge, stationary
    passed: bool = True


class GradCheckReport(BaseModel):
    """Finite-difference verification of the analytic YawLoss gradient"""
    h: float
    tolerance: float
    entries: List[GradCheckEntry] = []
    checked: int = 0
    passed: int = 0
    failed: int = 0
    excluded: int = 0
    exclusion_counts: Dict[str, int] = {}
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    per_point_max_abs: Dict[str, float] = {}
    per_point_max_rel: Dict[str, float] = {}

    @property
    def all_passed(self) -> bool:
        return self.failed == 0

    @property
    def excluded_fraction(self) -> float:
        total = self.checked + self.excluded
        return self.excluded / total if total else 0.0

    def summary_line(self) -> str:
        return f"{self.passed}/{self.checked} passed ({self.excluded} excluded)"

    @classmethod
    def merged(cls, reports: List["GradCheckReport"], h: float, tolerance: float) -> "GradCheckReport":
        """Totals over several reports; per-coordinate entries and per-point maxima are dropped."""
        exclusion_counts: Dict[str, int] = {}
        for report in reports:
            for reason, count in report.exclusion_counts.items():
                exclusion_counts[reason] = exclusion_counts.get(reason, 0) + count
        return cls(
            h=h,
            tolerance=tolerance,
            checked=sum(r.checked for r in reports),
            passed=sum(r.passed for r in reports),
            failed=sum(r.failed for r in reports),
            excluded=sum(r.excluded for r in reports),
            exclusion_counts=exclusion_counts,
            max_abs_error=max((r.max_abs_error for r in reports), default=0.0),
            max_rel_error=max((r.max_rel_error for r in reports), default=0.0),
        )

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON storage"""
        return self.model_dump(mode="json")
