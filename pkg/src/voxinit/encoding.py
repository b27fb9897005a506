"""Input encodings: sinusoidal coordinate features and text embeddings.

A FeatureGrid is a plain (N^3, D) float array whose rows follow the field's
voxel order. Text embeddings come from a provider with an
`embed(prompt) -> TextEmbedding` method; the desk provider below is fully
deterministic, the bridge-backed one lives in `voxinit.bridge`.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass

import numpy as np

from .validation import check_positive_int


@dataclass
class TextEmbedding:
    """Token-wise embedding matrix; token strings kept for diagnostics."""

    tokens: list[str]
    vectors: np.ndarray  # (L, D_txt)

    def __post_init__(self) -> None:
        if len(self.tokens) < 1 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("embedding needs one vector per token and at least one token")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")


def tokenize(prompt: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation."""
    tokens = (word.strip(string.punctuation) for word in prompt.lower().split())
    return [t for t in tokens if t]


def positional_features(centers: np.ndarray, freq_bands: int) -> np.ndarray:
    """Raw sinusoidal features, (M, 3) -> (M, 6*freq_bands).

    Layout is axis-major: for each of x, y, z the pairs
    (sin(2^l pi c), cos(2^l pi c)) for l = 0..freq_bands-1.
    """
    check_positive_int("freq_bands", freq_bands)
    centers = np.asarray(centers, dtype=np.float64)
    freqs = np.pi * np.exp2(np.arange(freq_bands, dtype=np.float64))
    args = centers[:, :, None] * freqs  # (M, 3, L)
    feats = np.stack([np.sin(args), np.cos(args)], axis=-1)  # (M, 3, L, 2)
    return feats.reshape(centers.shape[0], 6 * freq_bands)


def positional_encode(centers: np.ndarray, freq_bands: int, w_in: np.ndarray) -> np.ndarray:
    """Sinusoidal features projected into the network width: (M, 3) -> (M, D)."""
    raw = positional_features(centers, freq_bands)
    if w_in.shape[0] != raw.shape[1]:
        raise ValueError(f"w_in expects {raw.shape[1]} input features, has {w_in.shape[0]} rows")
    return raw.astype(w_in.dtype) @ w_in


class DeskTextProvider:
    """Deterministic stand-in for a diffusion model's text encoder.

    Every token maps to a unit-norm vector drawn from a generator seeded by a
    stable hash of the token string (plus the provider seed), so embeddings
    are identical across runs and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        self.dim = check_positive_int("dim", dim)
        self.seed = int(seed)

    def embed(self, prompt: str) -> TextEmbedding:
        tokens = tokenize(prompt)
        if not tokens:
            raise ValueError("prompt is empty after tokenization")
        vectors = np.stack([self._token_vector(t) for t in tokens])
        return TextEmbedding(tokens=tokens, vectors=vectors)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)
