"""Independent reference implementations used to check the fast paths.

These deliberately avoid the production code's machinery: attention is
straight-line dense math with no pooling or scatter, and the renderer
evaluates the compositing formula per pixel over full image arrays with no
bounding boxes, pair lists or segmented scans.
"""

from __future__ import annotations

import numpy as np

from voxinit.camera import CameraPose
from voxinit.field import VoxelGaussianField
from voxinit.network import NetworkParams
from voxinit.renderer import ALPHA_LIMIT, FOOTPRINT_RADIUS_SIGMA, MIN_DEPTH

LN_EPS = 1e-5


def layer_norm_oracle(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def self_attention_oracle(feats: np.ndarray, params) -> np.ndarray:
    """Token-level self-attention over every row, no grid pooling anywhere."""
    d = feats.shape[1]
    normed = layer_norm_oracle(feats, params.norm_gain, params.norm_bias)
    q = normed @ params.w_q
    k = normed @ params.w_k
    v = normed @ params.w_v
    scores = q @ k.T / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=1, keepdims=True)
    return feats + (attn @ v) @ params.w_o


def cross_attention_oracle(feats: np.ndarray, text: np.ndarray, params) -> np.ndarray:
    d = feats.shape[1]
    normed = layer_norm_oracle(feats, params.norm_gain, params.norm_bias)
    q = normed @ params.w_q
    k = text @ params.w_k
    v = text @ params.w_v
    scores = q @ k.T / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=1, keepdims=True)
    return feats + (attn @ v) @ params.w_o


def decoder_oracle(feats: np.ndarray, params) -> np.ndarray:
    z1 = feats @ params.w1 + params.b1
    s1 = np.log1p(np.exp(-np.abs(z1))) + np.maximum(z1, 0.0)  # stable softplus
    z2 = s1 @ params.w2 + params.b2
    return 1.0 / (1.0 + np.exp(-z2))


def network_oracle(params: NetworkParams, pe: np.ndarray, text: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full pipeline with grid size == lattice size, composing the oracle blocks."""
    feats = pe @ params.w_in
    for gip_p, gtf_p in zip(params.gip, params.gtf):
        feats = self_attention_oracle(feats, gip_p)
        feats = cross_attention_oracle(feats, text, gtf_p)
    alpha = decoder_oracle(feats, params.shape_head)[:, 0]
    color = decoder_oracle(feats, params.color_head)
    return alpha, color


def brute_force_render(field: VoxelGaussianField, cam: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel alpha compositing over dense image arrays; returns (color, weight_sum)."""
    h, w = cam.height, cam.width
    centers = np.asarray(field.centers, dtype=np.float64)
    pts = cam.world_to_camera(centers)
    z = pts[:, 2]
    order = np.argsort(z, kind="stable")

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    ucoord = cols + 0.5
    vcoord = rows + 0.5
    focal = cam.focal
    cx, cy = cam.principal

    image = np.zeros((h, w, 3))
    weight_sum = np.zeros((h, w))
    transmittance = np.ones((h, w))
    for idx in order:
        if z[idx] <= MIN_DEPTH:
            continue
        u = focal * pts[idx, 0] / z[idx] + cx
        v = focal * pts[idx, 1] / z[idx] + cy
        sigma = field.scale[0] * focal / z[idx]
        d2 = (ucoord - u) ** 2 + (vcoord - v) ** 2
        footprint = np.exp(-0.5 * d2 / sigma**2)
        footprint[d2 > (FOOTPRINT_RADIUS_SIGMA * sigma) ** 2] = 0.0
        a = np.minimum(float(field.opacity[idx]) * footprint, ALPHA_LIMIT)
        contribution = a * transmittance
        image += contribution[:, :, None] * np.asarray(field.color[idx], dtype=np.float64)
        weight_sum += contribution
        transmittance *= 1.0 - a
    return image, weight_sum


def finite_difference_param_grads(loss_fn, params: NetworkParams, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of a scalar loss over the packed parameter vector."""
    vec = params.pack()
    if indices is None:
        indices = range(vec.size)
    grad = np.zeros(vec.size)
    for i in indices:
        plus = vec.copy()
        plus[i] += h
        minus = vec.copy()
        minus[i] -= h
        grad[i] = (loss_fn(params.unpack(plus)) - loss_fn(params.unpack(minus))) / (2.0 * h)
    return grad


def finite_difference_array_grad(loss_fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar loss with respect to one array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x.astype(np.float64).reshape(-1)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        flat[i] = (loss_fn(plus.reshape(x.shape)) - loss_fn(minus.reshape(x.shape))) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom
