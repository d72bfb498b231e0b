"""Parameterized building blocks: linear maps, layer norm, attention, FFN.

Modules own named float64 parameter tensors and expose pure forward
functions.  Initialization draws affine weights from a zero-mean uniform
scaled by 1/sqrt(fan_in); biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, layer_norm, softmax


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class with recursive named-parameter discovery."""

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.parameters(key))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.parameters(f"{key}.{i}"))
        return params


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int):
        self.weight = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


NEG_MASK = 1e9  # additive penalty that underflows to zero weight after softmax


def attention_scores(q: Tensor, k: Tensor, key_mask: np.ndarray | None) -> Tensor:
    """Masked scaled dot-product logits; softmax rows sum to 1 over valid keys."""
    d_k = q.shape[-1]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_k))
    if key_mask is not None:
        penalty = (1.0 - np.asarray(key_mask, dtype=np.float64)) * NEG_MASK
        scores = scores - Tensor(penalty)
    return scores


def scaled_dot_attention(
    q: Tensor | np.ndarray,
    k: Tensor | np.ndarray,
    v: Tensor | np.ndarray,
    key_mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """softmax(q k^T / sqrt(d_k)) v with optional boolean key mask.

    `key_mask` broadcasts against the score matrix rows; a query row with
    every key masked has no valid distribution and raises ValueError.
    """
    q, k, v = (x if isinstance(x, Tensor) else Tensor(x) for x in (q, k, v))
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key/value row counts disagree")
    if key_mask is not None:
        valid = np.asarray(key_mask, dtype=bool)
        if not valid.any(axis=-1).all():
            raise ValueError("degenerate attention: a query row has all keys masked")
    weights = softmax(attention_scores(q, k, key_mask), axis=-1)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention(Module):
    """Multi-head attention with separate query/key-value sources."""

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int, kv_dim: int | None = None):
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.w_q = Linear(rng, dim, dim)
        self.w_k = Linear(rng, kv_dim, dim)
        self.w_v = Linear(rng, kv_dim, dim)
        self.w_o = Linear(rng, dim, dim)

    def _split(self, x: Tensor, length: int) -> Tensor:
        # (B, L, D) -> (B, H, L, d)
        batch = x.shape[0]
        return x.reshape(batch, length, self.num_heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(
        self,
        query: Tensor,
        key_value: Tensor,
        key_mask: np.ndarray | None = None,
        attn_bias: np.ndarray | None = None,
        collect: list | None = None,
    ) -> Tensor:
        """query (B, Lq, D), key_value (B, Lk, Dkv) -> (B, Lq, D).

        `key_mask` is (B, Lk) booleans; `attn_bias` is an additive (Lq, Lk)
        mask (used for causal decoding).  When `collect` is given, the
        per-head attention weights (B, H, Lq, Lk) are appended to it.
        """
        batch, len_q = query.shape[0], query.shape[1]
        len_k = key_value.shape[1]
        q = self._split(self.w_q(query), len_q)
        k = self._split(self.w_k(key_value), len_k)
        v = self._split(self.w_v(key_value), len_k)

        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        if key_mask is not None:
            penalty = (1.0 - np.asarray(key_mask, dtype=np.float64)) * NEG_MASK
            scores = scores - Tensor(penalty[:, None, None, :])
        if attn_bias is not None:
            scores = scores + Tensor(attn_bias[None, None, :, :])
        weights = softmax(scores, axis=-1)
        if collect is not None:
            collect.append(weights.data.copy())
        mixed = weights @ v
        merged = mixed.transpose(0, 2, 1, 3).reshape(batch, len_q, self.num_heads * self.head_dim)
        return self.w_o(merged)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, dim: int, hidden_mult: int = 4):
        self.fc1 = Linear(rng, dim, dim * hidden_mult)
        self.fc2 = Linear(rng, dim * hidden_mult, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class EncoderLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int):
        self.norm_attn = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, num_heads)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, key_mask=key_mask)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class CrossAttentionLayer(Module):
    """Pre-norm cross-attention + feed-forward block (no self-attention)."""

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int, kv_dim: int | None = None):
        self.norm_q = LayerNorm(dim)
        self.cross = MultiHeadAttention(rng, dim, num_heads, kv_dim=kv_dim)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)

    def __call__(
        self,
        x: Tensor,
        key_value: Tensor,
        key_mask: np.ndarray | None = None,
        collect: list | None = None,
    ) -> Tensor:
        x = x + self.cross(self.norm_q(x), key_value, key_mask=key_mask, collect=collect)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class CrossModalLayer(Module):
    """Self-attention, cross-attention onto visual states, then feed-forward.

    The same parameters serve bidirectional (matching) and causal
    (generation) modes; only the self-attention mask differs.
    """

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int, kv_dim: int | None = None):
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(rng, dim, num_heads)
        self.norm_cross = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(rng, dim, num_heads, kv_dim=kv_dim)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)

    def __call__(
        self,
        x: Tensor,
        visual: Tensor,
        self_mask: np.ndarray | None,
        causal_bias: np.ndarray | None,
        visual_mask: np.ndarray | None = None,
    ) -> Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, key_mask=self_mask, attn_bias=causal_bias)
        x = x + self.cross_attn(self.norm_cross(x), visual, key_mask=visual_mask)
        x = x + self.ffn(self.norm_ffn(x))
        return x


def causal_bias(length: int) -> np.ndarray:
    """Additive (L, L) mask: position t may attend to positions <= t."""
    future = np.triu(np.ones((length, length)), k=1)
    return -NEG_MASK * future


def prepend_rows(token: Tensor, x: Tensor) -> Tensor:
    """Broadcast a learned (1, 1, D) row onto the front of (B, L, D)."""
    batch = x.shape[0]
    lead = token + Tensor(np.zeros((batch, 1, token.shape[-1])))
    return concat([lead, x], axis=1)
