"""
Geometric distillation head.

Learnable spatial queries (one per teacher patch) cross-attend to the
projected visual query states:

    F_hat = Out(Attention(Wq Q_spatial, Wk H_vis, Wv H_vis))

and the result is matched to the frozen teacher features by MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.losses import mse_loss
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.nn.attention import scaled_dot_product_attention
from src.nn.module import Linear, Module, normal_param

D_DA3 = 16
N_SPATIAL = 64
PROJECTOR_HEADS = 4


@dataclass
class SpatialQueries(Module):
    q: Tensor  # [P, d_DA3]

    @classmethod
    def init(cls, rng: Rng, n_patches: int = N_SPATIAL, d: int = D_DA3) -> "SpatialQueries":
        return cls(q=normal_param(rng, (n_patches, d)))


@dataclass
class VisualProjector(Module):
    key: Linear
    value: Linear
    query: Linear
    out: Linear
    n_heads: int = PROJECTOR_HEADS

    @classmethod
    def init(cls, rng: Rng, d_vlm: int, d: int = D_DA3, n_heads: int = PROJECTOR_HEADS) -> "VisualProjector":
        return cls(
            key=Linear.init(rng, d_vlm, d),
            value=Linear.init(rng, d_vlm, d),
            query=Linear.init(rng, d, d),
            out=Linear.init(rng, d, d),
            n_heads=n_heads,
        )


def reconstruct_teacher(h_vis: Tensor, sq: SpatialQueries, proj: VisualProjector) -> Tensor:
    """[16, d_VLM] visual query states -> [64, 16] teacher-feature estimate."""
    attended = scaled_dot_product_attention(proj.query(sq.q), proj.key(h_vis), proj.value(h_vis), proj.n_heads)
    return proj.out(attended)


def visual_loss(f_hat: Tensor, f_teacher: np.ndarray | Tensor) -> Tensor:
    """MSE to the (normalised) teacher features; the teacher never takes a gradient."""
    teacher = f_teacher.detach() if isinstance(f_teacher, Tensor) else ops.constant(f_teacher)
    return mse_loss(f_hat, teacher)
