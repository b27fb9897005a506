"""Checkpoint file format.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then raw little-endian float64 blocks in parameter declaration order
(parameters, Adam first moments, Adam second moments). The header echoes the
config and carries the step counter and RNG states, so a resumed run
reproduces the remainder of an uninterrupted one bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError
from .network import NetworkParams

MAGIC = b"VOXINIT\x01"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    params: NetworkParams
    adam_m: NetworkParams | None
    adam_v: NetworkParams | None
    adam_t: int
    rng_states: dict
    prompt: str | None
    text_vectors: np.ndarray | None  # (L, D_txt), lets `render` decode offline


def save_checkpoint(
    path,
    config: TrainConfig,
    step: int,
    params: NetworkParams,
    adam_m: NetworkParams | None = None,
    adam_v: NetworkParams | None = None,
    adam_t: int = 0,
    rng_states: dict | None = None,
    prompt: str | None = None,
    text_vectors: np.ndarray | None = None,
) -> None:
    blocks = [("params", params)]
    if adam_m is not None and adam_v is not None:
        blocks += [("adam_m", adam_m), ("adam_v", adam_v)]
    header = {
        "version": VERSION,
        "config": config.to_dict(),
        "step": int(step),
        "adam_t": int(adam_t),
        "rng_states": rng_states or {},
        "prompt": prompt,
        # json round-trips float64 exactly (shortest-repr), so lists are lossless
        "text_vectors": None if text_vectors is None else np.asarray(text_vectors, dtype=np.float64).tolist(),
        "blocks": [name for name, _ in blocks],
        "arrays": [name for name, _ in params.named_arrays()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, group in blocks:
            fh.write(group.pack().astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a voxinit checkpoint (bad magic)")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    offset += header_len
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    try:
        config = TrainConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config echo ({exc})") from exc

    template = _template_params(config)
    size = template.num_parameters()
    blocks = header.get("blocks", [])
    expected = len(MAGIC) + 4 + header_len + 8 * size * len(blocks)
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")

    groups = {}
    for name in blocks:
        vec = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        groups[name] = template.unpack(vec)
    if "params" not in groups:
        raise CheckpointError(f"{path}: missing parameter block")
    text_vectors = header.get("text_vectors")
    return Checkpoint(
        config=config,
        step=int(header.get("step", 0)),
        params=groups["params"],
        adam_m=groups.get("adam_m"),
        adam_v=groups.get("adam_v"),
        adam_t=int(header.get("adam_t", 0)),
        rng_states=header.get("rng_states", {}),
        prompt=header.get("prompt"),
        text_vectors=None if text_vectors is None else np.asarray(text_vectors, dtype=np.float64),
    )


def check_resumable(checkpoint: Checkpoint, config: TrainConfig) -> None:
    """Refuse to resume under a different configuration."""
    saved = checkpoint.config.to_dict()
    wanted = config.to_dict()
    mismatched = [k for k in wanted if saved.get(k) != wanted[k]]
    if mismatched:
        raise CheckpointError(f"checkpoint config does not match run config (differs in: {', '.join(mismatched)})")
    if checkpoint.adam_m is None or checkpoint.adam_v is None:
        raise CheckpointError("checkpoint lacks optimizer state and cannot resume training")


def _template_params(config: TrainConfig) -> NetworkParams:
    from .network import init_network_params

    rng = np.random.default_rng(0)
    return init_network_params(
        rng,
        pe_dim=6 * config.freq_bands,
        feature_dim=config.feature_dim,
        text_dim=config.text_dim,
        hidden_dim=config.hidden_dim,
        dtype=config.np_dtype,
    )
