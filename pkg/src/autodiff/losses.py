"""Scalar losses: mean squared error and token cross-entropy."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from src.autodiff.tensor import Tensor, make_result
from src.errors import DimensionError, TokenIndexError


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of (pred - target)^2."""
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shape mismatch {list(pred.shape)} vs {list(target.shape)}.")
    diff = pred.data - target.data
    n = diff.size

    def backward(g: np.ndarray):
        gd = float(g) * 2.0 * diff / n
        return (gd, -gd)

    return make_result("mse", np.array((diff**2).mean()), (pred, target), backward)


def cross_entropy_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over positions of -log softmax(logits)[target]."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy_loss: logits must be [L, V], got {list(logits.shape)}.")
    length, vocab = logits.shape
    ids = np.asarray(list(targets), dtype=np.int64)
    if ids.shape != (length,):
        raise DimensionError(f"cross_entropy_loss: {ids.size} targets for {length} positions.")
    bad = ids[(ids < 0) | (ids >= vocab)]
    if bad.size:
        raise TokenIndexError(f"Target id {int(bad[0])} outside [0, {vocab}).")

    ld = logits.data
    shifted = ld - ld.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(length)
    loss = -log_p[rows, ids].mean()

    def backward(g: np.ndarray):
        grad = np.exp(log_p)
        grad[rows, ids] -= 1.0
        return (grad * (float(g) / length),)

    return make_result("cross_entropy", np.array(loss), (logits,), backward)
