"""Phase-I optimization loop: camera, forward, guidance, backward, Adam step.

Determinism contract: the run is a pure function of (prompt, config,
targets). Four independent RNG streams are spawned from the config seed
(parameter init, camera draws, timesteps, guidance seeds) and the camera,
timestep and guidance states are checkpointed, so resuming reproduces the
remaining steps bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import BridgeClient
from .camera import CameraPose, orbit_pose, sample_camera
from .checkpoint import Checkpoint, check_resumable, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .encoding import DeskTextProvider, positional_features
from .errors import DivergenceError, InvalidStateError
from .field import InitPointCloud, VoxelGaussianField, build_field, export_ply, filter_occupied, partition_grid
from .guidance import BridgeGuidanceProvider, PipelineForward, SyntheticTargetProvider, TargetSet, sds_apply
from .images import save_png
from .network import BufferPool, NetworkParams, init_network_params, network_forward_tape
from .optim import Adam
from .renderer import SplatCache, build_splat_cache, splat_forward

DIVERGENCE_LIMIT = 1e3  # abort when mean |residual| passes this
RNG_STREAMS = ("params", "camera", "timestep", "guidance")


@dataclass
class TrainResult:
    cloud: InitPointCloud
    field: VoxelGaussianField
    params: NetworkParams
    metrics: list[dict]
    config: TrainConfig


def train_init(
    prompt: str,
    config: TrainConfig,
    targets: TargetSet | None = None,
    out_dir=None,
    resume_from=None,
    stop_after_step: int | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Run the full initialization optimization and extract the point cloud.

    `stop_after_step` ends the loop early after that many completed steps
    (writing a resumable checkpoint), which is how an interrupted run is
    modeled; pass the checkpoint back via `resume_from` to continue it.
    """
    config.validate()
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be a non-empty string")
    if config.provider == "synthetic" and targets is None:
        raise ValueError("synthetic provider requires a TargetSet")

    field = build_field(config.resolution, config.extent, dtype=config.np_dtype)
    geometry_digest = hashlib.sha256(field.centers.tobytes()).hexdigest()
    gmap = partition_grid(field, config.grids)
    pe = positional_features(field.centers, config.freq_bands).astype(config.np_dtype)

    if config.provider == "synthetic":
        text_source = DeskTextProvider(dim=config.text_dim, seed=config.seed)
        provider = SyntheticTargetProvider(targets)
    else:
        client = BridgeClient(config.bridge_url)
        text_source = client
        provider = BridgeGuidanceProvider(client, guidance_scale=config.guidance_scale)
    text = text_source.embed(prompt).vectors.astype(config.np_dtype)

    streams = dict(zip(RNG_STREAMS, np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))))
    param_rng = np.random.default_rng(streams["params"])
    camera_rng = np.random.default_rng(streams["camera"])
    timestep_rng = np.random.default_rng(streams["timestep"])
    guidance_rng = np.random.default_rng(streams["guidance"])

    params = init_network_params(
        param_rng,
        pe_dim=6 * config.freq_bands,
        feature_dim=config.feature_dim,
        text_dim=config.text_dim,
        hidden_dim=config.hidden_dim,
        dtype=config.np_dtype,
    )
    adam = Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps)

    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        check_resumable(ckpt, config)
        params = ckpt.params
        adam = Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps)
        adam.load_state(ckpt.adam_m, ckpt.adam_v, ckpt.adam_t)
        for name, rng in (("camera", camera_rng), ("timestep", timestep_rng), ("guidance", guidance_rng)):
            if name in ckpt.rng_states:
                rng.bit_generator.state = ckpt.rng_states[name]
        start_step = ckpt.step

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        if config.snapshot_every:
            (out_path / "snapshots").mkdir(exist_ok=True)
        metrics_fh = open(out_path / "metrics.jsonl", "a" if resume_from else "w")

    pool = BufferPool()
    caches: dict[CameraPose, SplatCache] = {}
    snapshot_cam = orbit_pose(30.0, 20.0, config.orbit())
    metrics: list[dict] = []

    def rng_states() -> dict:
        return {
            "camera": camera_rng.bit_generator.state,
            "timestep": timestep_rng.bit_generator.state,
            "guidance": guidance_rng.bit_generator.state,
        }

    def write_checkpoint(step: int) -> None:
        if out_path is None:
            return
        save_checkpoint(
            out_path / "checkpoint.vxc",
            config,
            step,
            params,
            adam_m=adam.m,
            adam_v=adam.v,
            adam_t=adam.t,
            rng_states=rng_states(),
            prompt=prompt,
            text_vectors=text,
        )

    stopped_early = False
    try:
        for step in range(start_step, config.iterations):
            cams = []
            for _ in range(config.views_per_step):
                if config.provider == "synthetic":
                    cams.append(targets.cameras[int(camera_rng.integers(len(targets)))])
                else:
                    cams.append(sample_camera(camera_rng, config.orbit()))
            t = float(timestep_rng.uniform(config.t_min, config.t_max))
            guidance_seed = int(guidance_rng.integers(2**63))

            alpha, color, net_tape = network_forward_tape(params, pe, text, gmap, pool=pool)
            field.set_appearance(alpha, color)

            total_grads = None
            residual_abs = 0.0
            residual_sq = 0.0
            for cam in cams:
                cache = caches.get(cam)
                if cache is None:
                    cache = caches[cam] = build_splat_cache(field, cam)
                image, render_tape = splat_forward(field, cam, cache)
                residual = provider.residual(image, prompt=prompt, t=t, seed=guidance_seed, cam=cam)
                residual_abs += float(np.mean(np.abs(residual.residual)))
                residual_sq += float(np.mean(np.square(residual.residual)))
                if residual_abs / len(cams) > DIVERGENCE_LIMIT:
                    raise DivergenceError(
                        f"step {step}: mean |residual| {residual_abs / len(cams):.3e} exceeds {DIVERGENCE_LIMIT:.0e}"
                    )
                forward = PipelineForward(net_tape=net_tape, render_tape=render_tape, image=image)
                grads = sds_apply(residual, forward, params, pool=pool)
                if total_grads is None:
                    total_grads = grads
                else:
                    for (_, acc), (_, g) in zip(total_grads.named_arrays(), grads.named_arrays()):
                        acc += g
            adam.step(total_grads)

            record = {
                "step": step,
                "residual_norm": float(np.sqrt(residual_sq / len(cams))),
                "mean_abs_residual": residual_abs / len(cams),
                "mean_opacity": float(alpha.mean()),
                "occupied": int(np.count_nonzero(alpha >= config.tau)),
                "timestep": t,
            }
            metrics.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record) + "\n")
            if verbose and (step + 1) % 50 == 0:
                print(
                    f"step {step + 1}/{config.iterations} residual_norm={record['residual_norm']:.4f} "
                    f"occupied={record['occupied']}",
                    file=sys.stderr,
                )

            done = step + 1
            if out_path is not None and config.snapshot_every and done % config.snapshot_every == 0:
                snap = splat_forward(field, snapshot_cam, caches.setdefault(snapshot_cam, build_splat_cache(field, snapshot_cam)))[0]
                save_png(np.clip(snap.color, 0.0, 1.0), out_path / "snapshots" / f"step_{done:05d}.png")
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.iterations:
                write_checkpoint(done)
            if stop_after_step is not None and done >= stop_after_step:
                write_checkpoint(done)
                stopped_early = True
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    # decode once more so the exported field reflects the final parameters
    alpha, color, _ = network_forward_tape(params, pe, text, gmap, pool=pool)
    field.set_appearance(alpha, color)
    cloud = filter_occupied(field, config.tau)

    if hashlib.sha256(field.centers.tobytes()).hexdigest() != geometry_digest:
        raise InvalidStateError("fixed geometry changed during training")

    if out_path is not None and not stopped_early:
        write_checkpoint(config.iterations)
        export_ply(cloud, out_path / "init.ply", allow_empty=True)
    return TrainResult(cloud=cloud, field=field, params=params, metrics=metrics, config=config)


def load_for_render(checkpoint_path) -> tuple[Checkpoint, VoxelGaussianField]:
    """Rebuild the decoded field from a checkpoint (used by the render command)."""
    from .errors import CheckpointError
    from .network import network_forward

    ckpt = load_checkpoint(checkpoint_path)
    config = ckpt.config
    if ckpt.text_vectors is None:
        raise CheckpointError(f"{checkpoint_path}: checkpoint lacks the text embedding needed to decode")
    field = build_field(config.resolution, config.extent, dtype=config.np_dtype)
    gmap = partition_grid(field, config.grids)
    pe = positional_features(field.centers, config.freq_bands).astype(config.np_dtype)
    text = ckpt.text_vectors.astype(config.np_dtype)
    alpha, color = network_forward(ckpt.params, pe, text, gmap)
    field.set_appearance(alpha, color)
    return ckpt, field
