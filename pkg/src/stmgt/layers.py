"""Network building blocks: multi-relation GCN, attention, FFN, Transformer layers, 1x1 head.

All functions accept arbitrary leading batch axes; the trailing axes carry the
shapes given in each docstring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .numcore import Tensor

MASK_VALUE = -1e9
GCN_OUTPUTS = ("softmax", "linear")


@dataclass
class GcnParams:
    w0: list[Tensor]  # one (C, H) per relation
    w1: list[Tensor]  # one (H, F) per relation


@dataclass
class AttentionParams:
    """Per-head projections stored side by side: head i owns columns ``i*d_k:(i+1)*d_k``."""

    wq: Tensor  # (d_model, n*d_k)
    wk: Tensor
    wv: Tensor
    wo: Tensor  # (n*d_k, d_model)
    n_heads: int


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln1: LayerNormParams
    ffn: FfnParams
    ln2: LayerNormParams


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    ln1: LayerNormParams
    cross_attn: AttentionParams
    ln2: LayerNormParams
    ffn: FfnParams
    ln3: LayerNormParams


# -- spatial ---------------------------------------------------------------------

def gcn_forward(x: Tensor, relations: np.ndarray, params: GcnParams, output: str = "softmax") -> Tensor:
    """Two-layer GCN per relation, outputs concatenated on the feature axis.

    x: (..., N, C); relations: (R, N, N) normalized adjacencies.
    Returns (..., N, R*F) with relation r occupying columns ``r*F:(r+1)*F``.
    """
    x = nc.as_tensor(x)
    relations = np.asarray(relations)
    if relations.ndim == 2:
        relations = relations[None]
    n_rel, n = relations.shape[0], relations.shape[-1]
    if n_rel < 1:
        raise ConfigError("GCN needs at least one relation graph")
    if x.ndim < 2 or x.shape[-2] != n:
        raise DimensionError(f"gcn_forward: input {x.shape} does not have {n} nodes")
    if len(params.w0) != n_rel or len(params.w1) != n_rel:
        raise DimensionError(f"gcn_forward: {n_rel} relations but {len(params.w0)} weight pairs")
    if output not in GCN_OUTPUTS:
        raise ConfigError(f"gcn output mode must be one of {GCN_OUTPUTS}, got {output!r}")
    outs = []
    for r in range(n_rel):
        a_hat = Tensor(relations[r])
        hidden = nc.relu(a_hat @ x @ params.w0[r])
        z = a_hat @ hidden @ params.w1[r]
        outs.append(nc.softmax_rows(z) if output == "softmax" else z)
    return outs[0] if n_rel == 1 else nc.concat(outs, axis=-1)


# -- attention -------------------------------------------------------------------

def causal_mask(length: int) -> np.ndarray:
    """Boolean (L, L) mask; True where position i may attend to position j (j <= i)."""
    return np.tril(np.ones((length, length), dtype=bool))


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None = None) -> Tensor:
    q, k = nc.as_tensor(q), nc.as_tensor(k)
    d_k = q.shape[-1]
    if k.shape[-1] != d_k:
        raise DimensionError(f"attention: query dim {d_k} != key dim {k.shape[-1]}")
    # scale the (L, d_k) queries rather than the (L, L) scores
    scores = (q * (1.0 / np.sqrt(d_k))) @ nc.swapaxes(k, -1, -2)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise DimensionError(f"attention mask {mask.shape} does not match ({q.shape[-2]}, {k.shape[-2]})")
        scores = scores + np.where(mask, 0.0, MASK_VALUE)
    return nc.softmax_rows(scores)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v, with masked logits pushed to -1e9."""
    v = nc.as_tensor(v)
    if v.shape[-2] != nc.as_tensor(k).shape[-2]:
        raise DimensionError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    return attention_weights(q, k, mask) @ v


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, width = x.shape
    return nc.swapaxes(nc.reshape(x, (*lead, length, n_heads, width // n_heads)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, n_heads, length, d_k = x.shape
    return nc.reshape(nc.swapaxes(x, -2, -3), (*lead, length, n_heads * d_k))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams,
                         mask: np.ndarray | None = None) -> Tensor:
    n = params.n_heads
    d_model = params.wq.shape[0]
    if d_model % n:
        raise ConfigError(f"d_model={d_model} is not divisible by {n} heads")
    for name, t in (("query", q), ("key", k), ("value", v)):
        if t.shape[-1] != d_model:
            raise DimensionError(f"multi_head_attention: {name} feature dim {t.shape[-1]} != d_model {d_model}")
    qh = _split_heads(q @ params.wq, n)
    kh = _split_heads(k @ params.wk, n)
    vh = _split_heads(v @ params.wv, n)
    return _merge_heads(scaled_dot_attention(qh, kh, vh, mask)) @ params.wo


# -- feed-forward, position, normalization -----------------------------------------

def positional_encoding(length: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even d_model, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def ffn_forward(x: Tensor, p: FfnParams) -> Tensor:
    if x.shape[-1] != p.w1.shape[0] or p.w1.shape[1] != p.w2.shape[0]:
        raise DimensionError(f"ffn: input {x.shape} vs W1 {p.w1.shape}, W2 {p.w2.shape}")
    return nc.relu(x @ p.w1 + p.b1) @ p.w2 + p.b2


def _norm(x: Tensor, p: LayerNormParams) -> Tensor:
    return nc.layer_norm(x, p.gain, p.bias)


def encoder_layer(x: Tensor, p: EncoderLayerParams) -> Tensor:
    h = _norm(x + multi_head_attention(x, x, x, p.attn), p.ln1)
    return _norm(h + ffn_forward(h, p.ffn), p.ln2)


def decoder_layer(x: Tensor, enc_out: Tensor, p: DecoderLayerParams) -> Tensor:
    if enc_out.shape[-1] != x.shape[-1]:
        raise DimensionError(f"decoder: encoder width {enc_out.shape[-1]} != decoder width {x.shape[-1]}")
    h = _norm(x + multi_head_attention(x, x, x, p.self_attn, causal_mask(x.shape[-2])), p.ln1)
    h = _norm(h + multi_head_attention(h, enc_out, enc_out, p.cross_attn), p.ln2)
    return _norm(h + ffn_forward(h, p.ffn), p.ln3)


# -- output ------------------------------------------------------------------------

def conv1x1_head(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Shared linear map over the channel axis: (..., M, d) -> (..., M)."""
    if w.shape != (x.shape[-1], 1):
        raise DimensionError(f"conv1x1_head: weight {w.shape} incompatible with input {x.shape}")
    if b.size != 1:
        raise DimensionError(f"conv1x1_head: bias must be a scalar, got shape {b.shape}")
    y = x @ w
    return nc.reshape(y, y.shape[:-1]) + nc.reshape(b, ())
