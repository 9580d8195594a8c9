"""
Pre-norm transformer blocks and the flow-time embedding.

    x = x + Attn(LN(x))
    x = x + FFN(LN(x))          FFN: Linear(d, 4d) -> GELU -> Linear(4d, d)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import ContractError
from src.nn.attention import AttentionParams, multi_head_self_attention
from src.nn.module import LayerNorm, Linear, Module

FFN_EXPANSION = 4


@dataclass
class FeedForward(Module):
    up: Linear
    down: Linear

    @classmethod
    def init(cls, rng: Rng, d_model: int, zero_out: bool = False) -> "FeedForward":
        return cls(
            up=Linear.init(rng, d_model, FFN_EXPANSION * d_model),
            down=Linear.init(rng, FFN_EXPANSION * d_model, d_model, zero=zero_out),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ops.gelu(self.up(x)))


@dataclass
class TransformerBlockParams(Module):
    ln1: LayerNorm
    attn: AttentionParams
    ln2: LayerNorm
    ffn: FeedForward

    @classmethod
    def init(cls, rng: Rng, d_model: int, zero_residual: bool = False) -> "TransformerBlockParams":
        return cls(
            ln1=LayerNorm.init(d_model),
            attn=AttentionParams.init(rng, d_model, zero_out=zero_residual),
            ln2=LayerNorm.init(d_model),
            ffn=FeedForward.init(rng, d_model, zero_out=zero_residual),
        )


def transformer_block(x: Tensor, params: TransformerBlockParams, mask: np.ndarray | None, n_heads: int) -> Tensor:
    x = ops.add(x, multi_head_self_attention(params.ln1(x), params.attn, mask, n_heads))
    return ops.add(x, params.ffn(params.ln2(x)))


# ──────────────────────────────────────────────
# Flow-time embedding
# ──────────────────────────────────────────────

TIME_SCALE = 1000.0
MAX_PERIOD = 10000.0


def sinusoidal_features(t: float, d: int) -> np.ndarray:
    """[sin(w_i s), ..., cos(w_i s), ...] with s = 1000 t, w_i = 10000^(-i/(d/2))."""
    half = d // 2
    freqs = np.exp(-math.log(MAX_PERIOD) * np.arange(half) / half)
    angles = TIME_SCALE * t * freqs
    feats = np.concatenate([np.sin(angles), np.cos(angles)])
    if d % 2:
        feats = np.concatenate([feats, [0.0]])
    return feats


@dataclass
class TimeEmbedder(Module):
    """Sinusoidal features followed by a 2-layer GELU MLP."""

    fc1: Linear
    fc2: Linear

    @classmethod
    def init(cls, rng: Rng, d: int) -> "TimeEmbedder":
        return cls(fc1=Linear.init(rng, d, d), fc2=Linear.init(rng, d, d))

    @property
    def dim(self) -> int:
        return self.fc1.d_in


def time_embed(t: float, d: int, mlp: TimeEmbedder) -> Tensor:
    """Embed flow time ``t`` in [0, 1] as a [d] vector."""
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"Flow time t={t} lies outside [0, 1].")
    feats = ops.constant(sinusoidal_features(t, d).reshape(1, d))
    return ops.reshape(mlp.fc2(ops.gelu(mlp.fc1(feats))), (d,))
