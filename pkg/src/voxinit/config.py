"""Run configuration: every knob the method leaves open, pinned explicitly.

A JSON config file plus the prompt fully determines a run; `voxinit
print-config` dumps the effective values so nothing stays implicit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import OrbitConfig
from .validation import check_positive_int, check_unit_interval

PROVIDERS = ("synthetic", "bridge")


@dataclass
class TrainConfig:
    # representation
    resolution: int = 32  # N, voxels per axis
    grids: int = 16  # G, attention cells per axis
    feature_dim: int = 64  # D
    text_dim: int = 64  # D_txt
    hidden_dim: int = 64  # decoder hidden width
    freq_bands: int = 6  # sinusoidal frequencies per axis
    extent: tuple[float, float] = (-1.0, 1.0)
    # optimization
    iterations: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float = 0.1  # opacity threshold for the exported cloud
    seed: int = 0
    dtype: str = "float64"
    # guidance
    provider: str = "synthetic"
    bridge_url: str | None = None
    guidance_scale: float = 20.0
    t_min: float = 0.02
    t_max: float = 0.98
    views_per_step: int = 1
    # cameras / rendering
    render_size: int = 64
    orbit_radius: float = 2.2
    elevation_min: float = -10.0
    elevation_max: float = 45.0
    fov_deg: float = 49.1
    # artifacts
    snapshot_every: int = 0  # 0 disables snapshot renders
    checkpoint_every: int = 0  # 0 means final checkpoint only

    def validate(self) -> "TrainConfig":
        check_positive_int("iterations", self.iterations)
        check_positive_int("resolution", self.resolution)
        check_positive_int("grids", self.grids)
        if self.grids > self.resolution:
            raise ValueError(f"grids ({self.grids}) must not exceed resolution ({self.resolution})")
        for name in ("feature_dim", "text_dim", "hidden_dim", "freq_bands", "render_size", "views_per_step"):
            check_positive_int(name, getattr(self, name))
        check_unit_interval("tau", self.tau)
        if self.provider not in PROVIDERS:
            raise ValueError(f"provider must be one of {PROVIDERS}, got {self.provider!r}")
        if self.provider == "bridge" and not self.bridge_url:
            raise ValueError("provider 'bridge' requires bridge_url")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(f"timestep range must satisfy 0 < t_min < t_max < 1, got ({self.t_min}, {self.t_max})")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def orbit(self) -> OrbitConfig:
        return OrbitConfig(
            radius=self.orbit_radius,
            elevation_range=(self.elevation_min, self.elevation_max),
            fov_deg=self.fov_deg,
            height=self.render_size,
            width=self.render_size,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["extent"] = list(self.extent)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "extent" in data:
            data = dict(data)
            data["extent"] = tuple(data["extent"])
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
