"""Camera poses on an orbit sphere and the pinhole projection they induce.

Conventions, fixed once for the whole package:
  * world frame is right-handed with +z up;
  * orbit position = target + radius * (cos e cos a, cos e sin a, sin e)
    for azimuth a and elevation e (so azimuth 0, elevation 0 sits on +x);
  * camera frame: +z looks from the position toward the target, +y points
    down in the image, +x right;
  * pixel (row i, col j) has continuous image coordinates (j + 0.5, i + 0.5),
    the principal point is (W/2, H/2), and the focal length in pixels is
    H / (2 tan(fov_y / 2)) for square pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_y: float = math.radians(49.1)
    height: int = 64
    width: int = 64

    def __post_init__(self) -> None:
        if tuple(self.position) == tuple(self.target):
            raise ValueError("camera position must differ from its target")
        if not 0.0 < self.fov_y < math.pi:
            raise ValueError(f"vertical FOV must lie in (0, pi), got {self.fov_y}")
        if self.height < 8 or self.width < 8:
            raise ValueError("image size must be at least 8x8")

    @property
    def focal(self) -> float:
        return self.height / (2.0 * math.tan(self.fov_y / 2.0))

    @property
    def principal(self) -> tuple[float, float]:
        return self.width / 2.0, self.height / 2.0

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the camera's x, y, z axes."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pos = np.asarray(self.position, dtype=points.dtype)
        return (points - pos) @ self.rotation().astype(points.dtype).T

    def project(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Camera-space points to continuous pixel coordinates (u, v)."""
        cx, cy = self.principal
        z = points_cam[:, 2]
        u = self.focal * points_cam[:, 0] / z + cx
        v = self.focal * points_cam[:, 1] / z + cy
        return u, v


@dataclass(frozen=True)
class OrbitConfig:
    """Distribution of training cameras: a fixed-radius orbit around the origin."""

    radius: float = 2.2
    elevation_range: tuple[float, float] = (-10.0, 45.0)  # degrees
    fov_deg: float = 49.1
    height: int = 64
    width: int = 64

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError(f"orbit radius must be positive, got {self.radius}")
        lo, hi = self.elevation_range
        if not -89.0 <= lo <= hi <= 89.0:
            raise ValueError(f"elevation range must be ordered within (-89, 89), got {self.elevation_range}")


def orbit_pose(
    azimuth_deg: float,
    elevation_deg: float,
    orbit: OrbitConfig = OrbitConfig(),
) -> CameraPose:
    """Look-at-origin pose at the given spherical angles on the orbit."""
    a = math.radians(azimuth_deg)
    e = math.radians(elevation_deg)
    position = (
        orbit.radius * math.cos(e) * math.cos(a),
        orbit.radius * math.cos(e) * math.sin(a),
        orbit.radius * math.sin(e),
    )
    return CameraPose(
        position=position,
        fov_y=math.radians(orbit.fov_deg),
        height=orbit.height,
        width=orbit.width,
    )


def sample_camera(rng: np.random.Generator, orbit: OrbitConfig = OrbitConfig()) -> CameraPose:
    """Draw a pose with azimuth ~ U[0, 360) and elevation uniform over the orbit range."""
    azimuth = rng.uniform(0.0, 360.0)
    elevation = rng.uniform(*orbit.elevation_range)
    return orbit_pose(azimuth, elevation, orbit)
