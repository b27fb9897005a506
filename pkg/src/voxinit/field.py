"""Voxelized field of fixed-pose 3D Gaussians.

One Gaussian sits at every voxel center of a uniform N^3 lattice. Geometry
(center, scale, rotation) never changes; only opacity and color are written,
once per decoder pass. Voxels are stored flat with x varying fastest, i.e.
flat = (iz * N + iy) * N + ix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_extent, check_positive_int, check_unit_interval

FIXED_SCALE = (0.05, 0.05, 0.05)
FIXED_ROTATION = (1.0, 0.0, 0.0, 0.0)

_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""


@dataclass
class VoxelGaussianField:
    """N^3 Gaussians with learned opacity and degree-0 SH color."""

    resolution: int
    extent: tuple[float, float]
    centers: np.ndarray  # (N^3, 3), read-only
    opacity: np.ndarray  # (N^3,) in [0, 1]
    color: np.ndarray  # (N^3, 3) in [0, 1]

    @property
    def scale(self) -> tuple[float, float, float]:
        return FIXED_SCALE

    @property
    def rotation(self) -> tuple[float, float, float, float]:
        return FIXED_ROTATION

    @property
    def num_gaussians(self) -> int:
        return self.centers.shape[0]

    @property
    def spacing(self) -> float:
        lo, hi = self.extent
        return (hi - lo) / self.resolution

    def set_appearance(self, opacity: np.ndarray, color: np.ndarray) -> None:
        """Overwrite opacity and color, e.g. after a decoder pass."""
        opacity = np.asarray(opacity)
        color = np.asarray(color)
        if opacity.shape != (self.num_gaussians,):
            raise ValueError(f"opacity must have shape ({self.num_gaussians},), got {opacity.shape}")
        if color.shape != (self.num_gaussians, 3):
            raise ValueError(f"color must have shape ({self.num_gaussians}, 3), got {color.shape}")
        for name, arr in (("opacity", opacity), ("color", color)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} values must lie in [0, 1]")
        self.opacity = opacity
        self.color = color


@dataclass
class GridIndexMap:
    """Assignment of voxels to the G^3 equal spatial grids used by grid attention.

    `order` lists voxel ids grouped by grid (stable within a grid), `starts`
    gives each grid's offset into `order`; both exist so pooling can run as a
    contiguous segmented reduction.
    """

    grids: int
    indices: np.ndarray  # (N^3,) int32, grid id per voxel
    counts: np.ndarray  # (G^3,) int64, voxels per grid
    order: np.ndarray  # (N^3,) voxel ids sorted by grid id
    starts: np.ndarray  # (G^3,) offset of each grid's run in `order`
    uniform: bool  # all grids hold the same number of voxels

    @property
    def num_grids(self) -> int:
        return self.grids**3

    def pool_mean(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Per-grid mean of per-voxel rows: (M, D) -> (G^3, D)."""
        sums = self.segment_sum(x, out=out)
        sums /= self.counts[:, None].astype(x.dtype)
        return sums

    def segment_sum(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Per-grid sum of per-voxel rows; the adjoint of `scatter`."""
        grouped = x[self.order]
        if out is None:
            out = np.empty((self.num_grids, x.shape[1]), dtype=x.dtype)
        if self.uniform:
            k = int(self.counts[0])
            np.sum(grouped.reshape(self.num_grids, k, x.shape[1]), axis=1, out=out)
        else:
            np.add.reduceat(grouped, self.starts, axis=0, out=out)
        return out

    def scatter(self, grid_values: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Broadcast per-grid rows back to voxels: (G^3, D) -> (M, D)."""
        return np.take(grid_values, self.indices, axis=0, out=out)

    def pool_mean_backward(self, d_pooled: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Adjoint of `pool_mean`: broadcast each grid gradient divided by its count."""
        scaled = d_pooled / self.counts[:, None].astype(d_pooled.dtype)
        return np.take(scaled, self.indices, axis=0, out=out)


@dataclass
class InitPointCloud:
    """Occupied voxel centers with their colors, ready for a downstream GS trainer.

    Positions are float32 because that is the PLY vertex precision; export
    followed by import is then the identity on positions.
    """

    positions: np.ndarray  # (P, 3) float32
    colors: np.ndarray  # (P, 3) in [0, 1]

    def __len__(self) -> int:
        return self.positions.shape[0]


def build_field(
    resolution: int,
    extent: tuple[float, float] = (-1.0, 1.0),
    dtype=np.float64,
) -> VoxelGaussianField:
    """Place one Gaussian at every voxel center of the uniform lattice.

    Opacity and color start at the 0.5 placeholder and are overwritten by
    every decoder pass.
    """
    n = check_positive_int("resolution", resolution)
    lo, hi = check_extent(extent)
    spacing = (hi - lo) / n
    axis = lo + (np.arange(n, dtype=np.float64) + 0.5) * spacing
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
    centers = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    centers.setflags(write=False)
    m = n**3
    return VoxelGaussianField(
        resolution=n,
        extent=(lo, hi),
        centers=centers,
        opacity=np.full(m, 0.5, dtype=dtype),
        color=np.full((m, 3), 0.5, dtype=dtype),
    )


def voxel_coordinates(field: VoxelGaussianField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer (ix, iy, iz) lattice coordinates for every flat voxel id."""
    n = field.resolution
    flat = np.arange(n**3)
    return flat % n, (flat // n) % n, flat // (n * n)


def partition_grid(field: VoxelGaussianField, grids: int) -> GridIndexMap:
    """Partition the voxel lattice into G^3 equal grids.

    Per axis a voxel at integer coordinate i belongs to grid floor(i*G/N),
    which is the exact equal split whenever G divides N and leaves no grid
    empty for any 1 <= G <= N.
    """
    g = check_positive_int("grids", grids)
    n = field.resolution
    if g > n:
        raise ValueError(f"grids must not exceed resolution ({n}), got {g}: empty grids would corrupt pooled averages")
    ix, iy, iz = voxel_coordinates(field)
    gx = ix * g // n
    gy = iy * g // n
    gz = iz * g // n
    indices = ((gz * g + gy) * g + gx).astype(np.int32)
    counts = np.bincount(indices, minlength=g**3).astype(np.int64)
    order = np.argsort(indices, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    uniform = bool(np.all(counts == counts[0]))
    return GridIndexMap(grids=g, indices=indices, counts=counts, order=order, starts=starts, uniform=uniform)


def filter_occupied(field: VoxelGaussianField, tau: float) -> InitPointCloud:
    """Keep every voxel whose opacity reaches the threshold.

    Voxels with opacity strictly below tau are discarded; opacity exactly tau
    is kept.
    """
    tau = check_unit_interval("tau", tau)
    mask = field.opacity >= tau
    return InitPointCloud(
        positions=field.centers[mask].astype(np.float32),
        colors=np.asarray(field.color[mask], dtype=np.float64),
    )


def quantize_color(colors: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding half-up (0.5 -> 128)."""
    return np.clip(np.floor(np.asarray(colors, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def export_ply(cloud: InitPointCloud, destination, allow_empty: bool = False) -> int:
    """Write the point cloud as binary little-endian PLY; returns bytes written.

    `destination` is a path or binary file object. Empty clouds are refused
    unless `allow_empty` is set, because downstream GS trainers reject empty
    initializations.
    """
    if len(cloud) == 0 and not allow_empty:
        raise ValueError("refusing to export an empty point cloud (pass allow_empty to override)")
    header = _PLY_HEADER.format(count=len(cloud)).encode("ascii")
    record = np.zeros(
        len(cloud),
        dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]),
    )
    record["xyz"] = cloud.positions.astype("<f4")
    record["rgb"] = quantize_color(cloud.colors)
    payload = header + record.tobytes()
    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        Path(destination).write_bytes(payload)
    return len(payload)


def read_ply(source) -> InitPointCloud:
    """Read a PLY file produced by `export_ply` (colors come back as b/255)."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ValueError("not a PLY file")
    header_lines = data[: end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header_lines:
        raise ValueError("unsupported PLY format")
    count = None
    for line in header_lines:
        if line.startswith("element vertex "):
            count = int(line.split()[-1])
    if count is None:
        raise ValueError("PLY header lacks a vertex element")
    body = data[end + len(b"end_header\n") :]
    record = np.frombuffer(body, dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]), count=count)
    return InitPointCloud(
        positions=record["xyz"].astype(np.float32),
        colors=record["rgb"].astype(np.float64) / 255.0,
    )
