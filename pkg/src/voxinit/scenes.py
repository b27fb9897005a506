"""Analytic toy scenes for oracle-mode training and evaluation.

The two-sphere scene is the standard desk-scale recovery target: ground-truth
occupancy is known in closed form, so IoU against the trained field needs no
reference implementation beyond a boolean comparison.
"""

from __future__ import annotations

import numpy as np

from .camera import OrbitConfig, orbit_pose
from .field import VoxelGaussianField, build_field
from .guidance import TargetSet
from .renderer import splat_render

TWO_SPHERE_RADIUS = 0.35
TWO_SPHERE_CENTERS = ((-0.45, 0.0, 0.0), (0.45, 0.0, 0.0))
TWO_SPHERE_COLORS = ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))  # red, blue


def sphere_occupancy(centers: np.ndarray, sphere_center, radius: float) -> np.ndarray:
    delta = centers - np.asarray(sphere_center, dtype=np.float64)
    return np.einsum("ij,ij->i", delta, delta) <= radius**2


def two_sphere_occupancy(centers: np.ndarray) -> np.ndarray:
    """Boolean mask of voxel centers inside the union of the two spheres."""
    masks = [sphere_occupancy(centers, c, TWO_SPHERE_RADIUS) for c in TWO_SPHERE_CENTERS]
    return masks[0] | masks[1]


def two_sphere_field(resolution: int = 32, extent: tuple[float, float] = (-1.0, 1.0)) -> VoxelGaussianField:
    """Ground-truth field: opaque red/blue spheres on an otherwise empty lattice."""
    field = build_field(resolution, extent)
    opacity = np.zeros(field.num_gaussians)
    color = np.full((field.num_gaussians, 3), 0.0)
    for center, rgb in zip(TWO_SPHERE_CENTERS, TWO_SPHERE_COLORS):
        mask = sphere_occupancy(field.centers, center, TWO_SPHERE_RADIUS)
        opacity[mask] = 1.0
        color[mask] = rgb
    field.set_appearance(opacity, color)
    return field


def make_orbit_targets(
    field: VoxelGaussianField,
    azimuths,
    elevations,
    orbit: OrbitConfig = OrbitConfig(),
) -> TargetSet:
    """Render the field from fixed orbit poses to form a synthetic target set."""
    cameras = [orbit_pose(a, e, orbit) for a, e in zip(azimuths, elevations, strict=True)]
    images = np.stack([np.clip(splat_render(field, cam).color, 0.0, 1.0) for cam in cameras])
    return TargetSet(cameras=cameras, images=images)


def two_sphere_targets(
    resolution: int = 32,
    num_views: int = 8,
    orbit: OrbitConfig = OrbitConfig(),
) -> tuple[TargetSet, np.ndarray]:
    """Fixed orbit renders of the two-sphere scene plus its occupancy mask.

    Azimuths spread evenly around the orbit; elevations sweep the orbit's
    range so silhouettes also carve from above and below.
    """
    gt = two_sphere_field(resolution)
    azimuths = np.arange(num_views) * (360.0 / num_views)
    lo, hi = orbit.elevation_range
    elevations = np.linspace(lo, hi, num_views)
    targets = make_orbit_targets(gt, azimuths, elevations, orbit)
    return targets, two_sphere_occupancy(gt.centers)


def occupancy_iou(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    union = np.count_nonzero(predicted | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(predicted & truth) / union
