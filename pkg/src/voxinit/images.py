"""Image file helpers: 8-bit PNG for eyeballing, raw float32 planes for oracles."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .field import quantize_color


def save_png(image: np.ndarray, path) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    Image.fromarray(quantize_color(image), mode="RGB").save(Path(path), format="PNG")


def save_raw_f32(array: np.ndarray, path) -> None:
    """Write little-endian float32 values in C order, no header."""
    Path(path).write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_raw_f32(path, shape) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {data.size}")
    return data.reshape(shape).astype(np.float64)
