"""Guidance providers: image-space gradients that drive the optimization.

The update rule seeds the renderer's adjoint with w(t) * residual, where the
residual plays the part of the denoiser error of a 2D diffusion model. The
synthetic provider compares renders against a fixed set of target views, so
the update equals the exact gradient of 0.5 * ||render - target||^2; the
bridge provider fetches the residual from a remote diffusion service.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraPose
from .errors import InvalidStateError
from .images import load_raw_f32, save_png, save_raw_f32
from .network import BufferPool, NetTape, NetworkParams, network_backward
from .renderer import RenderedImage, RenderTape, render_backward


@dataclass
class GuidanceResidual:
    """Per-pixel residual with its timestep weight."""

    residual: np.ndarray  # (H, W, 3)
    weight: float  # w(t) >= 0
    timestep: float  # t in (0, 1)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.residual)):
            raise ValueError("residual must be finite")
        if not (np.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError(f"weight must be a nonnegative scalar, got {self.weight}")


@dataclass
class TargetSet:
    """Fixed (camera, image) pairs acting as the synthetic oracle's ground truth."""

    cameras: list[CameraPose]
    images: np.ndarray  # (V, H, W, 3) in [0, 1]

    def __post_init__(self) -> None:
        if len(self.cameras) < 1 or self.images.shape[0] != len(self.cameras):
            raise ValueError("a target set needs one image per camera and at least one view")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("target images must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.cameras)

    def index_of(self, cam: CameraPose) -> int:
        try:
            return self.cameras.index(cam)
        except ValueError:
            raise ValueError("camera does not match any target view") from None

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        views = []
        for i, cam in enumerate(self.cameras):
            name = f"view_{i:03d}"
            save_raw_f32(self.images[i], directory / f"{name}.f32")
            save_png(self.images[i], directory / f"{name}.png")
            views.append(
                {
                    "image": f"{name}.f32",
                    "position": list(cam.position),
                    "target": list(cam.target),
                    "up": list(cam.up),
                    "fov_y": cam.fov_y,
                }
            )
        manifest = {
            "version": 1,
            "height": int(self.images.shape[1]),
            "width": int(self.images.shape[2]),
            "views": views,
        }
        (directory / "targets.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "TargetSet":
        directory = Path(directory)
        manifest = json.loads((directory / "targets.json").read_text())
        if manifest.get("version") != 1:
            raise ValueError(f"unsupported target-set version {manifest.get('version')!r}")
        h, w = manifest["height"], manifest["width"]
        cameras = []
        images = []
        for view in manifest["views"]:
            cameras.append(
                CameraPose(
                    position=tuple(view["position"]),
                    target=tuple(view["target"]),
                    up=tuple(view["up"]),
                    fov_y=view["fov_y"],
                    height=h,
                    width=w,
                )
            )
            images.append(load_raw_f32(directory / view["image"], (h, w, 3)))
        return cls(cameras=cameras, images=np.stack(images))


def synthetic_residual(
    rendered: RenderedImage,
    targets: TargetSet,
    cam: CameraPose,
    t: float = 0.5,
) -> GuidanceResidual:
    """residual = rendered - target with unit weight.

    Seeding the backward pass with it reproduces the exact gradient of
    0.5 * ||rendered - target||^2, which makes the whole chain testable
    against finite differences.
    """
    index = targets.index_of(cam)
    residual = np.asarray(rendered.color, dtype=np.float64) - targets.images[index]
    return GuidanceResidual(residual=residual, weight=1.0, timestep=float(t))


class SyntheticTargetProvider:
    """Desk-scale stand-in for the diffusion model: multi-view L2 toward fixed targets."""

    def __init__(self, targets: TargetSet) -> None:
        self.targets = targets

    def residual(self, rendered: RenderedImage, *, prompt: str, t: float, seed: int, cam: CameraPose) -> GuidanceResidual:
        return synthetic_residual(rendered, self.targets, cam, t=t)


class BridgeGuidanceProvider:
    """Routes residual computation to a remote diffusion bridge."""

    def __init__(self, client, guidance_scale: float = 20.0) -> None:
        self.client = client
        self.guidance_scale = float(guidance_scale)

    def residual(self, rendered: RenderedImage, *, prompt: str, t: float, seed: int, cam: CameraPose | None = None) -> GuidanceResidual:
        return self.client.residual(
            image=np.asarray(rendered.color),
            prompt=prompt,
            t=t,
            seed=seed,
            guidance_scale=self.guidance_scale,
        )


@dataclass
class PipelineForward:
    """Recorded state of one step's network + render forward pass."""

    net_tape: NetTape
    render_tape: RenderTape
    image: RenderedImage
    consumed: bool = False


def sds_apply(
    residual: GuidanceResidual,
    forward: PipelineForward | None,
    params: NetworkParams,
    pool: BufferPool | None = None,
) -> NetworkParams:
    """Chain w(t) * residual through the renderer and network adjoints.

    The diffusion model's own Jacobian is deliberately skipped; the residual
    enters directly as the image-space gradient.
    """
    if forward is None or forward.consumed:
        raise InvalidStateError("sds_apply requires a fresh recorded forward pass")
    forward.consumed = True
    seed = residual.weight * np.asarray(residual.residual, dtype=np.float64)
    d_opacity, d_color = render_backward(forward.render_tape, seed)
    return network_backward(params, forward.net_tape, d_opacity, d_color, pool=pool)
