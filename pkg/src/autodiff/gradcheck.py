"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from src.autodiff.tensor import Tape, Tensor, backward


def numeric_grad(f: Callable[[Tensor], Tensor], point: np.ndarray, h: float = 1e-5,
                 indices: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar f at ``point`` (flat indices optional)."""
    base = np.array(point, dtype=np.float64)
    flat = base.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    for i in coords:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(base.shape)


def analytic_grad(f: Callable[[Tensor], Tensor], point: np.ndarray) -> np.ndarray:
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    backward(y, tape)
    return np.zeros_like(x.data) if x.grad is None else x.grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def grad_check(f: Callable[[Tensor], Tensor], point: np.ndarray, h: float = 1e-5,
               indices: Sequence[int] | None = None) -> float:
    """Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12)."""
    a = analytic_grad(f, point).reshape(-1)
    n = numeric_grad(f, point, h, indices).reshape(-1)
    if indices is not None:
        idx = np.asarray(indices, dtype=np.int64)
        a, n = a[idx], n[idx]
    if a.size == 0:
        return 0.0
    return float(relative_error(a, n).max())
