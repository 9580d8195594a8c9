"""Reverse-mode automatic differentiation over dense float64 tensors."""

from src.autodiff.gradcheck import grad_check
from src.autodiff.losses import cross_entropy_loss, mse_loss
from src.autodiff.optim import Adam, AdamState, adam_step
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "Adam",
    "AdamState",
    "Rng",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "backward",
    "cross_entropy_loss",
    "grad_check",
    "mse_loss",
]
