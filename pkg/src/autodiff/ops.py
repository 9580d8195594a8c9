"""
Differentiable primitives.

Every function takes Tensors, computes the forward value with numpy and
registers a backward rule through ``make_result``. Broadcasting is limited to
the last-axis bias add; everything else requires equal shapes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from src.autodiff.tensor import Tensor, make_result
from src.errors import ContractError, DimensionError, NumericError

GELU_C = math.sqrt(2.0 / math.pi)


def constant(data, name: str | None = None) -> Tensor:
    """Tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False, name=name)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}.")


# ──────────────────────────────────────────────
# Elementwise
# ──────────────────────────────────────────────


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return make_result("scale", a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[..., d] + bias[d]; the one broadcast this library supports."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: cannot add bias {list(bias.shape)} to {list(x.shape)}.")
    lead = tuple(range(x.data.ndim - 1))
    return make_result("add_bias", x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead)))


def mul_row(x: Tensor, row: Tensor) -> Tensor:
    """x[..., d] * row[d] (layer-norm gain)."""
    if row.data.ndim != 1 or x.shape[-1] != row.shape[0]:
        raise DimensionError(f"mul_row: cannot scale {list(x.shape)} by {list(row.shape)}.")
    lead = tuple(range(x.data.ndim - 1))
    xd, rd = x.data, row.data
    return make_result("mul_row", xd * rd, (x, row), lambda g: (g * rd, (g * xd).sum(axis=lead)))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add one d-vector to every row of a T x d tensor (time embedding)."""
    return add_bias(x, row)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    inner = GELU_C * (xd + 0.044715 * xd**3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def backward(g: np.ndarray):
        d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * xd**2)
        deriv = 0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th**2) * d_inner
        return (g * deriv,)

    return make_result("gelu", out, (x,), backward)


# ──────────────────────────────────────────────
# Linear algebra and layout
# ──────────────────────────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[m,k] @ [k,n], or batched [h,m,k] @ [h,k,n] with identical h."""
    ad, bd = a.data, b.data
    ok = (
        ad.ndim == bd.ndim
        and ad.ndim in (2, 3)
        and ad.shape[-1] == bd.shape[-2]
        and ad.shape[:-2] == bd.shape[:-2]
    )
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}.")

    def backward(g: np.ndarray):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return make_result("matmul", ad @ bd, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return make_result("transpose", np.swapaxes(x.data, -1, -2).copy(), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result("permute", np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                       lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {list(x.shape)} as {list(shape)}.")
    src_shape = x.shape
    return make_result("reshape", x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src_shape),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    if not parts:
        raise ContractError("concat_rows needs at least one tensor.")
    tail = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != tail:
            raise DimensionError(f"concat_rows: trailing shape {list(p.shape[1:])} != {list(tail)}.")
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_result("concat_rows", np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= x.shape[0]):
        raise DimensionError(f"slice_rows: [{start}:{stop}] out of range for {list(x.shape)}.")
    src_shape = x.shape

    def backward(g: np.ndarray):
        full = np.zeros(src_shape)
        full[start:stop] = g
        return (full,)

    return make_result("slice_rows", x.data[start:stop].copy(), (x,), backward)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of ``table`` at ``ids``."""
    idx = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise DimensionError(f"take_rows: ids must lie in [0, {n_rows}).")
    src_shape = table.shape

    def backward(g: np.ndarray):
        full = np.zeros(src_shape)
        np.add.at(full, idx, g)
        return (full,)

    return make_result("take_rows", table.data[idx].copy(), (table,), backward)


# ──────────────────────────────────────────────
# Reductions and normalisation
# ──────────────────────────────────────────────


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_result("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get probability 0.

    The mask broadcasts against ``x`` (e.g. a T x T mask over h x T x T
    scores). Every row must keep at least one unmasked entry.
    """
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis.")
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax received non-finite input.")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not np.all(mask.any(axis=-1)):
            raise ContractError("softmax mask has a row with no attendable position.")
        xd = np.where(mask, xd, -np.inf)
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (out * g).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply gain and bias."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must be [{d}], got {list(gamma.shape)}/{list(beta.shape)}.")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    gd = gamma.data
    out = xhat * gd + beta.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g: np.ndarray):
        gx = g * gd
        dx = inv_std * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return (dx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return make_result("layer_norm", out, (x, gamma, beta), backward)


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum of equally shaped tensors."""
    if not terms:
        raise ContractError("add_n needs at least one tensor.")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total
