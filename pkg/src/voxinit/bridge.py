"""HTTP client for the diffusion bridge service.

Wire format (JSON over HTTP/1.1, float arrays as base64 little-endian f32):

  GET  /v1/health   -> {"status": "ok", "model_id": str}
  POST /v1/embed    {"prompt": str}
                    -> {"tokens": [[float, ...], ...], "dims": int}
  POST /v1/residual {"prompt": str,
                     "image": {"data": b64-f32, "shape": [H, W, 3]},
                     "t": float, "seed": int, "guidance_scale": float}
                    -> {"residual": {"data": b64-f32, "shape": [H, W, 3]},
                        "weight": float, "model_id": str}

Connection problems surface as TransportError (retryable); well-delivered
but malformed or rejected payloads surface as ProtocolError.
"""

from __future__ import annotations

import base64
import threading

import numpy as np
import requests

from .encoding import TextEmbedding, tokenize
from .errors import ProtocolError, TransportError
from .guidance import GuidanceResidual


def encode_f32(array: np.ndarray) -> dict:
    array = np.ascontiguousarray(array, dtype="<f4")
    return {
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
        "shape": list(array.shape),
    }


def decode_f32(payload: dict, expected_shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(payload["data"], validate=True)
        shape = tuple(int(s) for s in payload["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed float array payload: {exc}") from exc
    if shape != tuple(expected_shape):
        raise ProtocolError(f"bridge returned shape {shape}, expected {tuple(expected_shape)}")
    expected_bytes = 4 * int(np.prod(shape))
    if len(raw) != expected_bytes:
        raise ProtocolError(f"bridge returned {len(raw)} bytes, expected {expected_bytes}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


class BridgeClient:
    """Serializes its calls: at most one outstanding request at a time."""

    def __init__(self, base_url: str, timeout: float = 60.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()
        self._lock = threading.Lock()

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        with self._lock:
            try:
                response = self._session.request(method, url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                raise TransportError(f"bridge unreachable at {url}: {exc}") from exc
        if response.status_code >= 500:
            raise TransportError(f"bridge error {response.status_code} from {url}: {response.text[:200]}")
        if response.status_code >= 400:
            raise ProtocolError(f"bridge rejected request ({response.status_code}): {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProtocolError(f"bridge returned non-JSON body from {url}") from exc

    def health(self) -> dict:
        return self._request("GET", "/v1/health")

    def embed(self, prompt: str) -> TextEmbedding:
        if not prompt.strip():
            raise ValueError("prompt is empty")
        body = self._request("POST", "/v1/embed", {"prompt": prompt})
        try:
            vectors = np.asarray(body["tokens"], dtype=np.float64)
            dims = int(body["dims"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embed reply: {exc}") from exc
        if vectors.ndim != 2 or vectors.shape[1] != dims:
            raise ProtocolError(f"embed reply dims {dims} do not match rows of shape {vectors.shape}")
        # the bridge does not echo token strings; keep tokenizer output for diagnostics
        tokens = tokenize(prompt)
        if len(tokens) != vectors.shape[0]:
            tokens = [f"token_{i}" for i in range(vectors.shape[0])]
        return TextEmbedding(tokens=tokens, vectors=vectors)

    def residual(
        self,
        image: np.ndarray,
        prompt: str,
        t: float,
        seed: int,
        guidance_scale: float = 20.0,
    ) -> GuidanceResidual:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {image.shape}")
        body = self._request(
            "POST",
            "/v1/residual",
            {
                "prompt": prompt,
                "image": encode_f32(image),
                "t": float(t),
                "seed": int(seed),
                "guidance_scale": float(guidance_scale),
            },
        )
        try:
            weight = float(body["weight"])
            residual_payload = body["residual"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed residual reply: {exc}") from exc
        residual = decode_f32(residual_payload, image.shape)
        if not np.isfinite(weight) or weight < 0.0:
            raise ProtocolError(f"bridge returned invalid weight {weight}")
        return GuidanceResidual(residual=residual, weight=weight, timestep=float(t))
