"""The initialization network and its exact reverse-mode gradients.

Four stacked pairs of grid self-attention (spatial mixing over G^3 pooled
cells) and text cross-attention (per-Gaussian queries over token keys and
values), followed by two decoder heads for opacity and color. Every block is
pre-normalized and wrapped in a residual connection; attention is
single-head. All adjoints are written out by hand and are checked against
central finite differences in the test suite.

Gradient conventions used throughout (x is (M, D), W right-multiplies):
  y = x @ W          -> dW = x.T @ dy, dx = dy @ W.T
  mean-pool by grid  -> backward broadcasts dy / count to the grid's voxels
  scatter by index   -> backward sums gradients voxel-wise per grid
  A = softmax(S)     -> dS = A * (dA - rowsum(dA * A))
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidStateError
from .field import GridIndexMap

NUM_STACKS = 4
LN_EPS = 1e-5
ATTN_CHUNK = 256  # grid-attention rows processed per pass; keeps scores in cache
_SOFTMAX_SHIFT_BOUND = 60.0  # max-shift only when exp could overflow or underflow a row

_WORKERS = max(1, min(2, os.cpu_count() or 1))
_EXECUTOR: ThreadPoolExecutor | None = None


def _executor() -> ThreadPoolExecutor:
    global _EXECUTOR
    if _EXECUTOR is None:
        _EXECUTOR = ThreadPoolExecutor(max_workers=_WORKERS, thread_name_prefix="voxinit")
    return _EXECUTOR


def _chunk_spans(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def _run_spans(fn, spans) -> None:
    """Run span workers, two at a time when it pays off.

    Each span writes disjoint output rows, so scheduling order cannot change
    results; BLAS is pinned to one thread inside to avoid oversubscription.
    """
    if _WORKERS > 1 and len(spans) > 1:
        with threadpool_limits(limits=1, user_api="blas"):
            list(_executor().map(fn, spans))
    else:
        for span in spans:
            fn(span)


# ---------------------------------------------------------------------------
# elementwise helpers


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only of non-positive values, so never overflows
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def softplus(x: np.ndarray) -> np.ndarray:
    # max(x, 0) + log1p(exp(-|x|)): stable, and much faster than logaddexp
    t = np.exp(-np.abs(x))
    np.log1p(t, out=t)
    t += np.maximum(x, 0.0)
    return t


def softmax_rows(scores: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax; may write in place.

    The max shift is applied only when some row could overflow or underflow
    exp, which spares a full pass over the matrix in the common case.
    """
    if out is None:
        out = np.empty_like(scores)
    mx = np.max(scores, axis=1, keepdims=True)
    if float(np.abs(mx).max(initial=0.0)) > _SOFTMAX_SHIFT_BOUND:
        np.subtract(scores, mx, out=out)
        np.exp(out, out=out)
    else:
        np.exp(scores, out=out)
    sm = np.sum(out, axis=1, keepdims=True)
    np.reciprocal(sm, out=sm)  # multiply instead of a broadcast divide
    np.multiply(out, sm, out=out)
    return out


def softmax_backward(attn: np.ndarray, d_attn: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty_like(attn)
    inner = np.einsum("ij,ij->i", d_attn, attn)
    np.subtract(d_attn, inner[:, None], out=out)
    np.multiply(out, attn, out=out)
    return out


# ---------------------------------------------------------------------------
# layer norm


def layer_norm_normalize(x):
    """Returns (xhat, inv_std): rows centered and scaled to unit variance."""
    mu = x.mean(axis=1, keepdims=True)
    xhat = x - mu
    var = np.einsum("ij,ij->i", xhat, xhat) / x.shape[1]
    inv_std = 1.0 / np.sqrt(var + LN_EPS)[:, None]
    xhat *= inv_std
    return xhat, inv_std


def layer_norm_forward(x, gain, bias):
    """Returns (normed, xhat, inv_std); xhat and inv_std feed the backward pass."""
    xhat, inv_std = layer_norm_normalize(x)
    return xhat * gain + bias, xhat, inv_std


def layer_norm_backward(d_y, xhat, inv_std, gain):
    """Returns (d_x, d_gain, d_bias)."""
    d = xhat.shape[1]
    d_gain = np.einsum("ij,ij->j", d_y, xhat)
    d_bias = d_y.sum(axis=0)
    dxhat = d_y * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (np.einsum("ij,ij->i", dxhat, xhat) / d)[:, None]
    dxhat -= m1
    dxhat -= xhat * m2
    dxhat *= inv_std
    return dxhat, d_gain, d_bias


def layer_norm_normalize_backward(d_xhat, xhat, inv_std):
    """Adjoint of layer_norm_normalize alone (no affine)."""
    d = xhat.shape[1]
    m1 = d_xhat.mean(axis=1, keepdims=True)
    m2 = (np.einsum("ij,ij->i", d_xhat, xhat) / d)[:, None]
    d_x = d_xhat - m1
    d_x -= xhat * m2
    d_x *= inv_std
    return d_x


# ---------------------------------------------------------------------------
# parameters


@dataclass
class AttentionParams:
    """One attention block: pre-norm affine plus q/k/v/output projections.

    For grid attention w_k and w_v are (D, D); for text cross-attention they
    are (D_txt, D) because keys and values come from the token embeddings.
    """

    norm_gain: np.ndarray
    norm_bias: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    ARRAYS = ("norm_gain", "norm_bias", "w_q", "w_k", "w_v", "w_o")


@dataclass
class DecoderParams:
    """Two-layer head: linear, softplus, linear (squashed by the caller)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    ARRAYS = ("w1", "b1", "w2", "b2")


@dataclass
class NetworkParams:
    """Every learnable array, in the declaration order used for packing and checkpoints."""

    w_in: np.ndarray
    gip: list[AttentionParams]
    gtf: list[AttentionParams]
    shape_head: DecoderParams
    color_head: DecoderParams

    def named_arrays(self):
        yield "w_in", self.w_in
        for i, block in enumerate(self.gip):
            for key in AttentionParams.ARRAYS:
                yield f"gip{i}.{key}", getattr(block, key)
        for i, block in enumerate(self.gtf):
            for key in AttentionParams.ARRAYS:
                yield f"gtf{i}.{key}", getattr(block, key)
        for name, head in (("shape", self.shape_head), ("color", self.color_head)):
            for key in DecoderParams.ARRAYS:
                yield f"{name}.{key}", getattr(head, key)

    @property
    def dtype(self) -> np.dtype:
        return self.w_in.dtype

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def zeros_like(self) -> "NetworkParams":
        return self._map(np.zeros_like)

    def copy(self) -> "NetworkParams":
        return self._map(np.copy)

    def astype(self, dtype) -> "NetworkParams":
        return self._map(lambda a: a.astype(dtype))

    def _map(self, fn) -> "NetworkParams":
        def block(b: AttentionParams) -> AttentionParams:
            return AttentionParams(*(fn(getattr(b, k)) for k in AttentionParams.ARRAYS))

        def head(h: DecoderParams) -> DecoderParams:
            return DecoderParams(*(fn(getattr(h, k)) for k in DecoderParams.ARRAYS))

        return NetworkParams(
            w_in=fn(self.w_in),
            gip=[block(b) for b in self.gip],
            gtf=[block(b) for b in self.gtf],
            shape_head=head(self.shape_head),
            color_head=head(self.color_head),
        )

    def pack(self) -> np.ndarray:
        """Flatten to one float64 vector in declaration order."""
        return np.concatenate([a.ravel().astype(np.float64) for _, a in self.named_arrays()])

    def unpack(self, vec: np.ndarray) -> "NetworkParams":
        """Inverse of pack, preserving this instance's shapes and dtype."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_parameters():
            raise ValueError(f"expected {self.num_parameters()} packed values, got {vec.size}")
        offset = 0

        def take(template: np.ndarray) -> np.ndarray:
            nonlocal offset
            chunk = vec[offset : offset + template.size]
            offset += template.size
            return chunk.reshape(template.shape).astype(template.dtype)

        return self._map(take)


def init_network_params(
    rng: np.random.Generator,
    pe_dim: int,
    feature_dim: int,
    text_dim: int,
    hidden_dim: int,
    dtype=np.float64,
) -> NetworkParams:
    """Projections ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); norms at identity, biases at zero.

    Draw order equals declaration order, so a fixed seed pins every weight.
    """

    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    def attention(kv_dim: int) -> AttentionParams:
        return AttentionParams(
            norm_gain=np.ones(feature_dim, dtype=dtype),
            norm_bias=np.zeros(feature_dim, dtype=dtype),
            w_q=uniform(feature_dim, (feature_dim, feature_dim)),
            w_k=uniform(kv_dim, (kv_dim, feature_dim)),
            w_v=uniform(kv_dim, (kv_dim, feature_dim)),
            w_o=uniform(feature_dim, (feature_dim, feature_dim)),
        )

    def decoder(out_dim: int) -> DecoderParams:
        return DecoderParams(
            w1=uniform(feature_dim, (feature_dim, hidden_dim)),
            b1=np.zeros(hidden_dim, dtype=dtype),
            w2=uniform(hidden_dim, (hidden_dim, out_dim)),
            b2=np.zeros(out_dim, dtype=dtype),
        )

    w_in = uniform(pe_dim, (pe_dim, feature_dim))
    gip = [attention(feature_dim) for _ in range(NUM_STACKS)]
    gtf = [attention(text_dim) for _ in range(NUM_STACKS)]
    return NetworkParams(w_in=w_in, gip=gip, gtf=gtf, shape_head=decoder(1), color_head=decoder(3))


class BufferPool:
    """Reusable scratch buffers keyed by name.

    Large arrays (the G^3 x G^3 attention matrices in particular) exceed the
    allocator's mmap threshold, so reallocating them every step would pay
    page-fault costs; the training loop passes one pool for the whole run.
    """

    def __init__(self) -> None:
        self._bufs: dict = {}

    def get(self, key, shape, dtype) -> np.ndarray:
        buf = self._bufs.get(key)
        if buf is None or buf.shape != tuple(shape) or buf.dtype != dtype:
            buf = np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf


def _buffer(pool: BufferPool | None, key, shape, dtype) -> np.ndarray:
    if pool is None:
        return np.empty(shape, dtype)
    return pool.get(key, shape, dtype)


# ---------------------------------------------------------------------------
# grid self-attention (spatial mixing)


@dataclass
class GipTape:
    gmap: GridIndexMap
    params: AttentionParams
    xhat: np.ndarray
    inv_std: np.ndarray
    pooled_x: np.ndarray  # pooled normalized features, pre-affine, (G^3, D)
    pooled: np.ndarray  # after the norm's gain/bias, (G^3, D)
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray  # (G^3, G^3)
    hg: np.ndarray  # attn @ v


def gip_forward(
    feats: np.ndarray,
    gmap: GridIndexMap,
    params: AttentionParams,
    pool: BufferPool | None = None,
    block_id: int = 0,
    want_tape: bool = False,
):
    """Grid self-attention over G^3 mean-pooled cells, scattered back to voxels.

    Both the projections and the norm's per-column affine commute with mean
    pooling, so they are applied at grid level; the result equals normalizing
    and projecting per voxel first.
    """
    if np.any(gmap.counts == 0):
        raise InvalidStateError("grid map contains empty grids")
    d = feats.shape[1]
    gc = gmap.num_grids
    xhat, inv_std = layer_norm_normalize(feats)
    pooled_x = gmap.pool_mean(xhat)
    pooled = pooled_x * params.norm_gain + params.norm_bias
    q = pooled @ params.w_q
    k = pooled @ params.w_k
    v = pooled @ params.w_v
    attn = _buffer(pool, ("gip", block_id, "attn"), (gc, gc), feats.dtype)
    hg = np.empty((gc, d), dtype=feats.dtype)
    q_scaled = q * np.asarray(1.0 / math.sqrt(d), dtype=feats.dtype)  # fold the 1/sqrt(D) into q
    k_t = np.ascontiguousarray(k.T)

    # row-chunked so scores stay cache-resident through softmax and the
    # value product; the G^3 x G^3 matrix is written to memory only once
    def attend(span):
        rows = slice(*span)
        s = attn[rows]
        np.matmul(q_scaled[rows], k_t, out=s)
        softmax_rows(s, out=s)
        np.matmul(s, v, out=hg[rows])

    _run_spans(attend, _chunk_spans(gc, ATTN_CHUNK))
    out = feats + gmap.scatter(hg @ params.w_o)
    if not want_tape:
        return out
    tape = GipTape(gmap, params, xhat, inv_std, pooled_x, pooled, q, k, v, attn, hg)
    return out, tape


def gip_backward(
    tape: GipTape,
    d_out: np.ndarray,
    grads: AttentionParams,
    pool: BufferPool | None = None,
) -> np.ndarray:
    """Accumulates parameter gradients into `grads`, returns d(feats)."""
    p, gmap = tape.params, tape.gmap
    gc, d = tape.q.shape
    inv_sqrt_d = np.asarray(1.0 / math.sqrt(d), dtype=d_out.dtype)
    d_og = gmap.segment_sum(d_out)  # adjoint of scatter
    grads.w_o += tape.hg.T @ d_og
    d_hg = d_og @ p.w_o.T
    # chunked like the forward: the per-chunk score gradient never leaves
    # cache; each worker accumulates d_k/d_v into its own partial, and the
    # partials are reduced in worker order so results stay deterministic
    spans = _chunk_spans(gc, ATTN_CHUNK)
    groups = [spans[w::_WORKERS] for w in range(_WORKERS)] if _WORKERS > 1 else [spans]
    d_q = np.empty((gc, d), dtype=tape.attn.dtype)
    dk_parts = [np.zeros((gc, d), dtype=tape.attn.dtype) for _ in groups]
    dv_parts = [np.zeros((gc, d), dtype=tape.attn.dtype) for _ in groups]
    v_t = np.ascontiguousarray(tape.v.T)

    def backward_group(widx):
        d_s = _buffer(pool, ("bwd", "d_attn", widx), (min(ATTN_CHUNK, gc), gc), tape.attn.dtype)
        for span in groups[widx]:
            rows = slice(*span)
            attn = tape.attn[rows]
            ds = d_s[: attn.shape[0]]
            np.matmul(d_hg[rows], v_t, out=ds)
            dv_parts[widx] += attn.T @ d_hg[rows]
            softmax_backward(attn, ds, out=ds)
            np.matmul(ds, tape.k, out=d_q[rows])
            dk_parts[widx] += ds.T @ tape.q[rows]

    _run_spans(backward_group, range(len(groups)))
    d_k = dk_parts[0]
    d_v = dv_parts[0]
    for part_k, part_v in zip(dk_parts[1:], dv_parts[1:]):
        d_k += part_k
        d_v += part_v
    d_q *= inv_sqrt_d
    d_k *= inv_sqrt_d
    grads.w_q += tape.pooled.T @ d_q
    grads.w_k += tape.pooled.T @ d_k
    grads.w_v += tape.pooled.T @ d_v
    d_pooled = d_q @ p.w_q.T + d_k @ p.w_k.T + d_v @ p.w_v.T
    grads.norm_gain += np.einsum("ij,ij->j", d_pooled, tape.pooled_x)
    grads.norm_bias += d_pooled.sum(axis=0)
    d_xhat = gmap.pool_mean_backward(d_pooled * p.norm_gain)  # adjoint of mean pooling
    d_x = layer_norm_normalize_backward(d_xhat, tape.xhat, tape.inv_std)
    return d_out + d_x


# ---------------------------------------------------------------------------
# text cross-attention (semantic mixing)


@dataclass
class GtfTape:
    params: AttentionParams
    text: np.ndarray  # (L, D_txt)
    xhat: np.ndarray
    inv_std: np.ndarray
    normed: np.ndarray
    q: np.ndarray  # (M, D)
    v: np.ndarray  # (L, D)
    attn: np.ndarray  # (M, L)
    hc: np.ndarray  # (M, D)


def gtf_forward(
    feats: np.ndarray,
    text: np.ndarray,
    params: AttentionParams,
    want_tape: bool = False,
):
    """Every Gaussian's query attends over the L_t text tokens; linear in M."""
    d = feats.shape[1]
    normed, xhat, inv_std = layer_norm_forward(feats, params.norm_gain, params.norm_bias)
    text = text.astype(feats.dtype, copy=False)
    q = normed @ params.w_q
    k = text @ (params.w_k * np.asarray(1.0 / math.sqrt(d), dtype=feats.dtype))  # scale folded into k
    v = text @ params.w_v
    scores = q @ k.T
    attn = softmax_rows(scores, out=scores)
    hc = attn @ v
    out = feats + hc @ params.w_o
    if not want_tape:
        return out
    tape = GtfTape(params, text, xhat, inv_std, normed, q, v, attn, hc)
    return out, tape


def gtf_backward(tape: GtfTape, d_out: np.ndarray, grads: AttentionParams) -> np.ndarray:
    p = tape.params
    d = d_out.shape[1]
    inv_sqrt_d = 1.0 / math.sqrt(d)
    grads.w_o += tape.hc.T @ d_out
    d_hc = d_out @ p.w_o.T
    d_attn = d_hc @ tape.v.T
    d_v = tape.attn.T @ d_hc
    d_scores = softmax_backward(tape.attn, d_attn, out=d_attn)
    d_q = inv_sqrt_d * (d_scores @ (tape.text @ p.w_k))
    d_k = inv_sqrt_d * (d_scores.T @ tape.q)
    grads.w_q += tape.normed.T @ d_q
    grads.w_k += tape.text.T @ d_k
    grads.w_v += tape.text.T @ d_v
    d_normed = d_q @ p.w_q.T
    d_x, d_gain, d_bias = layer_norm_backward(d_normed, tape.xhat, tape.inv_std, p.norm_gain)
    grads.norm_gain += d_gain
    grads.norm_bias += d_bias
    return d_out + d_x


# ---------------------------------------------------------------------------
# decoder heads


@dataclass
class DecodeTape:
    params: DecoderParams
    f_in: np.ndarray
    z1: np.ndarray
    s1: np.ndarray
    y: np.ndarray


def decoder_forward(feats: np.ndarray, params: DecoderParams, want_tape: bool = False):
    """linear -> softplus -> linear -> sigmoid, mapping features into (0, 1)."""
    z1 = feats @ params.w1
    z1 += params.b1
    s1 = softplus(z1)
    z2 = s1 @ params.w2
    z2 += params.b2
    y = sigmoid(z2)
    if not want_tape:
        return y
    return y, DecodeTape(params, feats, z1, s1, y)


def decoder_backward(tape: DecodeTape, d_y: np.ndarray, grads: DecoderParams) -> np.ndarray:
    p = tape.params
    dz2 = d_y * tape.y * (1.0 - tape.y)
    grads.w2 += tape.s1.T @ dz2
    grads.b2 += dz2.sum(axis=0)
    ds1 = dz2 @ p.w2.T
    dz1 = ds1 * sigmoid(tape.z1)  # softplus' = sigmoid
    grads.w1 += tape.f_in.T @ dz1
    grads.b1 += dz1.sum(axis=0)
    return dz1 @ p.w1.T


# ---------------------------------------------------------------------------
# full network


@dataclass
class NetTape:
    pe_features: np.ndarray
    gip_tapes: list[GipTape]
    gtf_tapes: list[GtfTape]
    shape_tape: DecodeTape
    color_tape: DecodeTape


def network_forward_tape(
    params: NetworkParams,
    pe_features: np.ndarray,
    text: np.ndarray,
    gmap: GridIndexMap,
    pool: BufferPool | None = None,
):
    """Encode -> [grid attention -> text attention] x4 -> decode, recording a tape.

    `pe_features` are the raw sinusoidal coordinate features
    (see encoding.positional_features); returns (opacity, color, tape).
    """
    pe = pe_features.astype(params.dtype, copy=False)
    feats = pe @ params.w_in
    gip_tapes: list[GipTape] = []
    gtf_tapes: list[GtfTape] = []
    for i in range(NUM_STACKS):
        feats, tape_g = gip_forward(feats, gmap, params.gip[i], pool=pool, block_id=i, want_tape=True)
        gip_tapes.append(tape_g)
        feats, tape_t = gtf_forward(feats, text, params.gtf[i], want_tape=True)
        gtf_tapes.append(tape_t)
    alpha, shape_tape = decoder_forward(feats, params.shape_head, want_tape=True)
    color, color_tape = decoder_forward(feats, params.color_head, want_tape=True)
    tape = NetTape(pe, gip_tapes, gtf_tapes, shape_tape, color_tape)
    return alpha[:, 0], color, tape


def network_forward(
    params: NetworkParams,
    pe_features: np.ndarray,
    text: np.ndarray,
    gmap: GridIndexMap,
    pool: BufferPool | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Like network_forward_tape but discards the tape; returns (opacity, color)."""
    alpha, color, _ = network_forward_tape(params, pe_features, text, gmap, pool=pool)
    return alpha, color


def network_backward(
    params: NetworkParams,
    tape: NetTape | None,
    d_alpha: np.ndarray,
    d_color: np.ndarray,
    pool: BufferPool | None = None,
) -> NetworkParams:
    """Exact gradients of every parameter given seeds on the decoded outputs."""
    if tape is None:
        raise InvalidStateError("network_backward requires the tape of a recorded forward pass")
    grads = params.zeros_like()
    d_feats = decoder_backward(tape.shape_tape, np.asarray(d_alpha).reshape(-1, 1), grads.shape_head)
    d_feats += decoder_backward(tape.color_tape, d_color, grads.color_head)
    for i in reversed(range(NUM_STACKS)):
        d_feats = gtf_backward(tape.gtf_tapes[i], d_feats, grads.gtf[i])
        d_feats = gip_backward(tape.gip_tapes[i], d_feats, grads.gip[i], pool=pool)
    grads.w_in += tape.pe_features.T @ d_feats
    return grads
