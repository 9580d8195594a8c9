"""
Multi-head scaled dot-product attention.

Masks are boolean T x T arrays where ``mask[i][j]`` means position i may
attend to position j. Logit scale is 1/sqrt(head_dim).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, ContractError, DimensionError
from src.nn.module import Linear, Module


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    causal: bool = False

    def __post_init__(self) -> None:
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}.")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class AttentionParams(Module):
    """Q, K, V, O projections. K/V read from ``d_kv``-wide inputs."""

    wq: Linear
    wk: Linear
    wv: Linear
    wo: Linear

    @classmethod
    def init(cls, rng: Rng, d_model: int, d_kv: int | None = None, zero_out: bool = False) -> "AttentionParams":
        d_kv = d_model if d_kv is None else d_kv
        return cls(
            wq=Linear.init(rng, d_model, d_model),
            wk=Linear.init(rng, d_kv, d_model),
            wv=Linear.init(rng, d_kv, d_model),
            wo=Linear.init(rng, d_model, d_model, zero=zero_out),
        )


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[T, d] -> [h, T, d/h]."""
    t, d = x.shape
    return ops.permute(ops.reshape(x, (t, n_heads, d // n_heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """[h, T, d/h] -> [T, d]."""
    h, t, hd = x.shape
    return ops.reshape(ops.permute(x, (1, 0, 2)), (t, h * hd))


def scaled_dot_product_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Attention on already-projected q [Tq, d], k/v [Tk, d]."""
    if q.shape[1] != k.shape[1] or k.shape != v.shape:
        raise DimensionError(f"attention: q {list(q.shape)}, k {list(k.shape)}, v {list(v.shape)} disagree.")
    d = q.shape[1]
    if d % n_heads != 0:
        raise ConfigError(f"width {d} is not divisible by n_heads={n_heads}.")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[0], k.shape[0]):
            raise DimensionError(f"attention mask {list(mask.shape)} does not match [{q.shape[0]}, {k.shape[0]}].")
        if not np.all(mask.any(axis=1)):
            raise ContractError("attention mask has a row with no attendable position.")
    qh, kh, vh = split_heads(q, n_heads), split_heads(k, n_heads), split_heads(v, n_heads)
    scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(d // n_heads))
    weights = ops.softmax(scores, mask)
    out = merge_heads(ops.matmul(weights, vh))
    if return_weights:
        return out, weights
    return out


def multi_head_self_attention(x: Tensor, params: AttentionParams, mask: np.ndarray | None, n_heads: int) -> Tensor:
    q, k, v = params.wq(x), params.wk(x), params.wv(x)
    return params.wo(scaled_dot_product_attention(q, k, v, n_heads, mask))


def multi_head_cross_attention(q_in: Tensor, kv: Tensor, params: AttentionParams, n_heads: int) -> Tensor:
    q, k, v = params.wq(q_in), params.wk(kv), params.wv(kv)
    return params.wo(scaled_dot_product_attention(q, k, v, n_heads))
