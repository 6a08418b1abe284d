"""Attention primitives and post-norm encoder blocks.

Tokens are laid out row-wise: a token sequence is ``[..., L, d]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Dropout, LayerNorm, Linear, Module
from .tensor import ShapeError, Tensor

MASK_BIAS = -1e9


@dataclass
class AttentionConfig:
    d_model: int = 64
    num_heads: int = 4
    ffn_hidden: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.d_model, self.num_heads, self.ffn_hidden) <= 0:
            raise ValueError("attention extents must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads


def key_mask_bias(mask: np.ndarray) -> np.ndarray:
    """Additive attention bias from a [..., Lk] 0/1 key mask, broadcastable over heads and queries."""
    mask = np.asarray(mask)
    return np.where(mask > 0, 0.0, MASK_BIAS)[..., None, None, :]


def scaled_dot_attention(q, k, v, bias=None, return_weights=False):
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes.

    ``bias`` is added to the logits before the softmax (masking).
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"d_k mismatch between Q {q.shape} and K {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"K {k.shape} and V {v.shape} lengths differ")
    scores = T.matmul(q * (1.0 / np.sqrt(q.shape[-1])), k.swapaxes(-1, -2))
    if bias is not None:
        scores = scores + bias
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if d_model % num_heads:
            raise ValueError(f"d_model={d_model} not divisible by num_heads={num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, L, d = x.shape
        return x.reshape(*lead, L, self.num_heads, d // self.num_heads).swapaxes(-2, -3)

    def forward(self, x_q, x_k, x_v=None, bias=None):
        return multi_head_attention(x_q, x_k, self, x_v=x_v, bias=bias)


def multi_head_attention(x_q, x_kv, block, x_v=None, bias=None) -> Tensor:
    """Concat(H_1..H_h) W^O with H_i = Attn(Q W_i^Q, K W_i^K, V W_i^V).

    ``block`` is a :class:`MultiHeadAttention` (or anything exposing one as
    ``.attn``). Keys come from ``x_kv``; values from ``x_v`` when given (used
    when positional encodings are added to keys but not to values).
    """
    mha = block.attn if hasattr(block, "attn") else block
    x_q, x_kv = T.as_tensor(x_q), T.as_tensor(x_kv)
    x_v = x_kv if x_v is None else T.as_tensor(x_v)
    for name, x in (("query", x_q), ("key", x_kv), ("value", x_v)):
        if x.shape[-1] != mha.d_model:
            raise ShapeError(f"{name} width {x.shape[-1]} != d_model {mha.d_model}")
    q = mha._split(mha.w_q(x_q))
    k = mha._split(mha.w_k(x_kv))
    v = mha._split(mha.w_v(x_v))
    heads = scaled_dot_attention(q, k, v, bias=bias)
    *lead, h, L, dk = heads.shape
    merged = heads.swapaxes(-2, -3).reshape(*lead, L, h * dk)
    return mha.w_o(merged)


class FeedForward(Module):
    def __init__(self, d_model, hidden, rng, p_drop=0.0):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)
        self.drop = Dropout(p_drop, rng)

    def forward(self, x):
        return self.fc2(self.drop(self.fc1(x).relu()))


class EncoderBlock(Module):
    """Attention sub-layer then FFN sub-layer, each ``LN(x + f(x))``."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_hidden, rng, cfg.dropout)
        self.norm2 = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x, x_cross=None, pos_q=None, pos_kv=None, key_mask=None):
        return encoder_forward(x, x_cross, self, pos_q=pos_q, pos_kv=pos_kv, key_mask=key_mask)


def encoder_forward(x, x_cross, block: EncoderBlock, pos_q=None, pos_kv=None, key_mask=None) -> Tensor:
    """X' = LN(X + MultiHead(X[, X_cross])); out = LN(X' + FFN(X')).

    Positional encodings, when passed, are added to the query and key inputs
    only; values are taken from the raw tokens. For self-attention ``pos_kv``
    defaults to ``pos_q``.
    """
    x = T.as_tensor(x)
    kv = x if x_cross is None else T.as_tensor(x_cross)
    if x_cross is None and pos_kv is None:
        pos_kv = pos_q
    q_in = x + pos_q if pos_q is not None else x
    k_in = kv + pos_kv if pos_kv is not None else kv
    bias = key_mask_bias(key_mask) if key_mask is not None else None
    a = multi_head_attention(q_in, k_in, block.attn, x_v=kv, bias=bias)
    x1 = block.norm1(x + block.drop(a))
    return block.norm2(x1 + block.drop(block.ffn(x1)))


def sine_positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed encoding: even channels sin, odd channels cos, geometric frequencies base 10000."""
    if d_model % 2:
        raise ValueError(f"sine positional encoding needs an even width, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 1.0 / 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def spatial_sine_encoding(height: int, width: int, d_model: int) -> np.ndarray:
    """Row-major [H*W, d] encoding: first half encodes the row, second half the column."""
    if d_model % 4:
        raise ValueError(f"spatial encoding needs width divisible by 4, got {d_model}")
    half = d_model // 2
    rows = sine_positional_encoding(height, half)
    cols = sine_positional_encoding(width, half)
    grid = np.concatenate([np.repeat(rows, width, axis=0), np.tile(cols, (height, 1))], axis=1)
    return grid
