# Models package

from .app_settings import AppSettings
from .report import EvalReport, GradCheckEntry, GradCheckReport, SampleMetrics

__all__ = [
    'AppSettings',
    'EvalReport',
    'GradCheckEntry',
    'GradCheckReport',
    'SampleMetrics',
]
