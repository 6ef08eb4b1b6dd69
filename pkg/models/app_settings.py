"""
App Settings Model - Defaults for every evaluation, loss and raster knob
"""

import json
import logging
import os
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ValidationError


logger = logging.getLogger(__name__)

SETTINGS_ENV = "OFFYAW_SETTINGS"
ENV_OVERRIDES = {"OFFYAW_SEED": "seed", "OFFYAW_WORKERS": "workers", "OFFYAW_LOG_LEVEL": "log_level"}


class AppSettings(BaseModel):
    """Project-wide defaults; command-line flags override them"""
    alpha_deg: float = 45.0
    k_values: List[int] = [1, 5, 10]
    miss_threshold_m: float = 2.0
    horizon_steps: int = 12
    resolution_m: float = 0.2
    extents_m: List[float] = [20.0, 80.0, 50.0, 50.0]  # behind, ahead, left, right
    loss_scale: float = 1.0
    smooth_gate_width_deg: float = 0.0
    refine_gate_width_deg: float = 90.0
    refine_steps: int = 500
    refine_lr: float = 0.1
    gradcheck_h: float = 1e-4
    gradcheck_tolerance: float = 1e-4
    seed: int = 0
    workers: int = 1
    log_level: str = "WARNING"

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON storage"""
        return self.model_dump()

    @staticmethod
    def get_settings_file() -> Path:
        """Get path to settings file"""
        override = os.getenv(SETTINGS_ENV)
        if override:
            return Path(override)
        return Path(__file__).parent.parent / "settings.json"

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "AppSettings":
        """Load settings from file, then apply environment overrides"""
        settings_file = path or cls.get_settings_file()
        data = {}
        if settings_file.exists():
            try:
                with open(settings_file, 'r', encoding='utf-8') as f:
                    data = json.load(f)
                cls(**data)
            except (OSError, ValueError) as e:
                logger.warning("Error loading settings from %s: %s, using defaults", settings_file, e)
                data = {}
        for env_name, field_name in ENV_OVERRIDES.items():
            value = os.getenv(env_name)
            if value:
                data[field_name] = value
        try:
            return cls(**data)
        except ValidationError as e:
            logger.warning("Ignoring invalid environment overrides: %s", e)
            return cls()

    def save(self, path: Optional[Path] = None):
        """Save settings to file"""
        settings_file = path or self.get_settings_file()
        with open(settings_file, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
