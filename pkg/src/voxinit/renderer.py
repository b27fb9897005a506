"""Differentiable splatting of the voxel field; gradients reach only opacity and color.

Because the Gaussians never move, everything geometric about a view (which
pixels each Gaussian touches, its footprint weights, the front-to-back order)
can be computed once and reused across optimization steps. `SplatCache`
holds that structure as a flat list of (pixel, Gaussian) pairs sorted by
pixel and then by view depth, so a render is a handful of vectorized passes:

  alpha'_pair = clamp(opacity * footprint, <= 0.999)
  T_pair      = product of (1 - alpha') over nearer pairs of the same pixel
                (a segmented exclusive cumsum of log1p(-alpha'))
  color[pix] += color[gaussian] * alpha' * T

The log-space cumulative sums always run in float64: pair chains are long
and float32 prefix sums would lose the per-segment differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose
from .errors import InvalidStateError
from .field import VoxelGaussianField

ALPHA_LIMIT = 0.999  # per-splat opacity clamp, keeps 1/(1-a) adjoints bounded
FOOTPRINT_RADIUS_SIGMA = 3.0  # truncate each splat at 3 sigma
MIN_DEPTH = 1e-6  # anything at or behind this camera depth is culled


@dataclass
class RenderedImage:
    color: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray  # (H, W) accumulated opacity in [0, 1]


@dataclass
class SplatCache:
    """View-dependent but parameter-independent splatting structure."""

    cam: CameraPose
    num_gaussians: int
    pair_pix: np.ndarray  # (P,) int64 flat pixel index, ascending
    pair_gid: np.ndarray  # (P,) int32 Gaussian id, front-to-back within a pixel
    pair_gw: np.ndarray  # (P,) float64 footprint weight exp(-d^2 / (2 sigma^2))
    seg_id: np.ndarray  # (P,) int32 segment (pixel run) index
    seg_first: np.ndarray  # (S,) first pair of each segment
    seg_last: np.ndarray  # (S,) last pair of each segment
    seg_pix: np.ndarray  # (S,) pixel index of each segment

    @property
    def num_pairs(self) -> int:
        return self.pair_pix.shape[0]


def build_splat_cache(field: VoxelGaussianField, cam: CameraPose) -> SplatCache:
    centers = np.asarray(field.centers, dtype=np.float64)
    m = centers.shape[0]
    pts = cam.world_to_camera(centers)
    z = pts[:, 2]
    visible = z > MIN_DEPTH
    ids = np.flatnonzero(visible)
    pts = pts[ids]
    z = z[ids]

    focal = cam.focal
    cx, cy = cam.principal
    u = focal * pts[:, 0] / z + cx
    v = focal * pts[:, 1] / z + cy
    sigma = field.scale[0] * focal / z
    radius = FOOTPRINT_RADIUS_SIGMA * sigma

    # pixel j covers continuous coordinate j + 0.5
    x0 = np.maximum(np.ceil(u - radius - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(u + radius - 0.5), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(v - radius - 0.5), 0).astype(np.int64)
    y1 = np.minimum(np.floor(v + radius - 0.5), cam.height - 1).astype(np.int64)
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    on_screen = (nx > 0) & (ny > 0)
    ids, u, v, sigma = ids[on_screen], u[on_screen], v[on_screen], sigma[on_screen]
    x0, y0, nx, ny = x0[on_screen], y0[on_screen], nx[on_screen], ny[on_screen]
    z = z[on_screen]

    # enumerate bounding-box pixels per Gaussian, front-to-back
    depth_order = np.argsort(z, kind="stable")
    ids, u, v, sigma = ids[depth_order], u[depth_order], v[depth_order], sigma[depth_order]
    x0, y0, nx, ny = x0[depth_order], y0[depth_order], nx[depth_order], ny[depth_order]

    counts = nx * ny
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    owner = np.repeat(np.arange(ids.shape[0]), counts)
    within = np.arange(total) - offsets[owner]
    px = x0[owner] + within % nx[owner]
    py = y0[owner] + within // nx[owner]

    du = px + 0.5 - u[owner]
    dv = py + 0.5 - v[owner]
    d2 = du * du + dv * dv
    sig = sigma[owner]
    inside = d2 <= (FOOTPRINT_RADIUS_SIGMA * sig) ** 2  # circular truncation
    owner, px, py, d2, sig = owner[inside], px[inside], py[inside], d2[inside], sig[inside]

    pix = py * cam.width + px
    # stable sort preserves the depth order within each pixel
    perm = np.argsort(pix, kind="stable")
    pair_pix = pix[perm]
    pair_gid = ids[owner][perm].astype(np.int32)
    pair_gw = np.exp(-0.5 * d2[perm] / (sig[perm] ** 2))

    if pair_pix.size:
        new_seg = np.empty(pair_pix.shape[0], dtype=bool)
        new_seg[0] = True
        np.not_equal(pair_pix[1:], pair_pix[:-1], out=new_seg[1:])
        seg_first = np.flatnonzero(new_seg)
        seg_last = np.concatenate([seg_first[1:] - 1, [pair_pix.shape[0] - 1]])
        seg_id = (np.cumsum(new_seg) - 1).astype(np.int32)
        seg_pix = pair_pix[seg_first]
    else:
        seg_first = seg_last = seg_pix = np.empty(0, dtype=np.int64)
        seg_id = np.empty(0, dtype=np.int32)

    return SplatCache(
        cam=cam,
        num_gaussians=m,
        pair_pix=pair_pix,
        pair_gid=pair_gid,
        pair_gw=pair_gw,
        seg_id=seg_id,
        seg_first=seg_first,
        seg_last=seg_last,
        seg_pix=seg_pix,
    )


@dataclass
class RenderTape:
    cache: SplatCache
    alpha_pair: np.ndarray  # clamped per-pair opacity
    clamped: np.ndarray  # bool, where the 0.999 clamp was active
    transmittance: np.ndarray  # (P,) float64
    weight: np.ndarray  # (P,) float64, alpha' * T
    color: np.ndarray  # field colors at forward time, (M, 3)
    dtype: np.dtype


def splat_forward(
    field: VoxelGaussianField,
    cam: CameraPose,
    cache: SplatCache | None = None,
) -> tuple[RenderedImage, RenderTape]:
    """Render and record the tape needed for `render_backward`."""
    if cache is None:
        cache = build_splat_cache(field, cam)
    h, w = cam.height, cam.width
    dtype = field.opacity.dtype
    npair = cache.num_pairs

    alpha_raw = field.opacity[cache.pair_gid] * cache.pair_gw
    clamped = alpha_raw > ALPHA_LIMIT
    alpha_pair = np.minimum(alpha_raw, ALPHA_LIMIT)

    log_t = np.log1p(-alpha_pair, dtype=np.float64)
    prefix = np.cumsum(log_t)
    excl = prefix - log_t
    seg_base = excl[cache.seg_first]
    transmittance = np.exp(excl - seg_base[cache.seg_id])
    weight = alpha_pair * transmittance

    color_flat = np.zeros((h * w, 3), dtype=np.float64)
    pair_col = field.color[cache.pair_gid]
    for ch in range(3):
        color_flat[:, ch] = np.bincount(cache.pair_pix, weights=weight * pair_col[:, ch], minlength=h * w)

    # accumulated alpha via the product form 1 - prod(1 - a), which cannot
    # exceed 1 even after rounding (the weight-sum form can by a few ulp)
    alpha_flat = np.zeros(h * w, dtype=np.float64)
    if npair:
        seg_total = prefix[cache.seg_last] - seg_base
        alpha_flat[cache.seg_pix] = -np.expm1(seg_total)

    image = RenderedImage(
        color=color_flat.reshape(h, w, 3).astype(dtype),
        alpha=alpha_flat.reshape(h, w).astype(dtype),
    )
    tape = RenderTape(cache, alpha_pair, clamped, transmittance, weight, field.color, dtype)
    return image, tape


def splat_render(
    field: VoxelGaussianField,
    cam: CameraPose,
    cache: SplatCache | None = None,
) -> RenderedImage:
    """Project, depth-sort and alpha-composite the field over a black background."""
    image, _ = splat_forward(field, cam, cache)
    return image


def render_backward(
    tape: RenderTape | None,
    d_color_image: np.ndarray,
    d_alpha_image: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact adjoint of the compositing; returns (d_opacity, d_color).

    Geometry is fixed, so no gradients flow to centers, scale or rotation.
    """
    if tape is None:
        raise InvalidStateError("render_backward requires the tape of a recorded forward pass")
    cache = tape.cache
    m = cache.num_gaussians
    h, w = cache.cam.height, cache.cam.width
    d_color_image = np.asarray(d_color_image, dtype=np.float64)
    if d_color_image.shape != (h, w, 3):
        raise ValueError(f"image seed must have shape {(h, w, 3)}, got {d_color_image.shape}")
    dc_flat = d_color_image.reshape(-1, 3)

    d_opacity = np.zeros(m, dtype=np.float64)
    d_color = np.zeros((m, 3), dtype=np.float64)
    if cache.num_pairs == 0:
        return d_opacity.astype(tape.dtype), d_color.astype(tape.dtype)

    dc_pair = dc_flat[cache.pair_pix]
    col_pair = tape.color[cache.pair_gid]
    d_weight = np.einsum("ij,ij->i", dc_pair, col_pair)

    for ch in range(3):
        d_color[:, ch] = np.bincount(cache.pair_gid, weights=tape.weight * dc_pair[:, ch], minlength=m)

    if d_alpha_image is not None:
        # accumulated alpha = sum of weights per pixel, so it shares the chain
        d_alpha_flat = np.asarray(d_alpha_image, dtype=np.float64).reshape(-1)
        d_weight += d_alpha_flat[cache.pair_pix]

    # d/d(alpha'_i): direct term T_i * dw_i, plus the transmittance chain
    # through every later pair of the pixel: -sum_{j>i} a_j T_j dw_j / (1-a_i)
    s = tape.weight * d_weight
    prefix = np.cumsum(s)
    seg_end = prefix[cache.seg_last]
    suffix = seg_end[cache.seg_id] - prefix
    d_alpha_pair = tape.transmittance * d_weight - suffix / (1.0 - tape.alpha_pair)
    d_alpha_pair[tape.clamped] = 0.0
    d_opacity = np.bincount(cache.pair_gid, weights=cache.pair_gw * d_alpha_pair, minlength=m)

    return d_opacity.astype(tape.dtype), d_color.astype(tape.dtype)
