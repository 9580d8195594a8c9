"""
Parameter containers.

A Module is a dataclass whose fields are Tensors, other Modules, or lists of
Modules. ``named_parameters`` walks those fields in declaration order, which
gives every tensor a stable dotted name for checkpoints and the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor


class Module:
    """Mixin for dataclass parameter containers."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> None:
        """Mark every tensor frozen; frozen tensors never take gradients."""
        for p in self.parameters():
            p.frozen = True
            p.requires_grad = False
            p.grad = None

    @property
    def is_frozen(self) -> bool:
        params = self.parameters()
        return bool(params) and all(p.frozen for p in params)


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def normal_param(rng: Rng, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
    return param(rng.normal(shape, std=std))


@dataclass
class Linear(Module):
    """y = x W + b with W stored as [d_in, d_out]."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_out: int, zero: bool = False) -> "Linear":
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal((d_in, d_out), std=1.0 / math.sqrt(d_in))
        return cls(weight=param(w), bias=param(np.zeros(d_out)))

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add_bias(ops.matmul(x, self.weight), self.bias)


@dataclass
class LayerNorm(Module):
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNorm":
        return cls(gamma=param(np.ones(d)), beta=param(np.zeros(d)))

    def __call__(self, x: Tensor, eps: float = 1e-5) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, eps)
