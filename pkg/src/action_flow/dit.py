"""
DiT vector-field network v(a_t, t, state, H_vlm).

Primary tokens are [state token, H action tokens] with learned positions and
the flow-time embedding added to every row. Each block applies, pre-norm and
residual:

    self-attention over the primary tokens
    cross-attention into H_vlm
    feed-forward

The field is read from the action-token rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import DimensionError
from src.nn.attention import AttentionParams, multi_head_cross_attention, multi_head_self_attention
from src.nn.blocks import FeedForward, TimeEmbedder, time_embed
from src.nn.module import LayerNorm, Linear, Module, normal_param

D_DIT = 64
N_DIT_BLOCKS = 2
N_DIT_HEADS = 4
A_DIM = 3
STATE_DIM = 4


@dataclass
class DiTBlockParams(Module):
    ln_self: LayerNorm
    self_attn: AttentionParams
    ln_cross: LayerNorm
    cross_attn: AttentionParams
    ln_ffn: LayerNorm
    ffn: FeedForward

    @classmethod
    def init(cls, rng: Rng, d: int, d_ctx: int) -> "DiTBlockParams":
        return cls(
            ln_self=LayerNorm.init(d),
            self_attn=AttentionParams.init(rng, d),
            ln_cross=LayerNorm.init(d),
            cross_attn=AttentionParams.init(rng, d, d_kv=d_ctx),
            ln_ffn=LayerNorm.init(d),
            ffn=FeedForward.init(rng, d),
        )


@dataclass
class DiTParams(Module):
    action_in: Linear
    state_in: Linear
    pos: Tensor
    time: TimeEmbedder
    blocks: list[DiTBlockParams]
    ln_out: LayerNorm
    out: Linear
    n_heads: int = N_DIT_HEADS

    @classmethod
    def init(cls, rng: Rng, horizon: int, d_ctx: int, d: int = D_DIT, n_blocks: int = N_DIT_BLOCKS,
             n_heads: int = N_DIT_HEADS) -> "DiTParams":
        return cls(
            action_in=Linear.init(rng, A_DIM, d),
            state_in=Linear.init(rng, STATE_DIM, d),
            pos=normal_param(rng, (horizon + 1, d)),
            time=TimeEmbedder.init(rng, d),
            blocks=[DiTBlockParams.init(rng, d, d_ctx) for _ in range(n_blocks)],
            ln_out=LayerNorm.init(d),
            out=Linear.init(rng, d, A_DIM),
            n_heads=n_heads,
        )

    @property
    def horizon(self) -> int:
        return self.pos.shape[0] - 1

    @property
    def d_model(self) -> int:
        return self.pos.shape[1]


def _as_tensor(x: Tensor | np.ndarray) -> Tensor:
    return x if isinstance(x, Tensor) else ops.constant(np.asarray(x, dtype=np.float64))


def dit_forward(a_t: Tensor | np.ndarray, t: float, state: Tensor | np.ndarray, h_vlm: Tensor,
                params: DiTParams) -> Tensor:
    """Predicted velocity [H, 3]."""
    a_t, state = _as_tensor(a_t), _as_tensor(state)
    if a_t.shape != (params.horizon, A_DIM):
        raise DimensionError(f"Noisy chunk {list(a_t.shape)} does not match [{params.horizon}, {A_DIM}].")
    state_row = params.state_in(ops.reshape(state, (1, STATE_DIM)))
    x = ops.concat_rows([state_row, params.action_in(a_t)])
    x = ops.add(x, params.pos)
    x = ops.add_row(x, time_embed(t, params.d_model, params.time))
    for block in params.blocks:
        x = ops.add(x, multi_head_self_attention(block.ln_self(x), block.self_attn, None, params.n_heads))
        x = ops.add(x, multi_head_cross_attention(block.ln_cross(x), h_vlm, block.cross_attn, params.n_heads))
        x = ops.add(x, block.ffn(block.ln_ffn(x)))
    v = params.out(params.ln_out(x))
    return ops.slice_rows(v, 1, params.horizon + 1)
