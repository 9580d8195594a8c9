"""
Adam optimizer with explicit, checkpointable state.

Defaults beta1=0.9, beta2=0.999, eps=1e-8. Registering a frozen tensor is a
contract error; that is how the frozen decoder stays bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from src.autodiff.tensor import Tensor
from src.errors import ContractError


@dataclass
class AdamState:
    """Moments for one parameter plus the shared hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(param: Tensor, grad: np.ndarray | None, state: AdamState) -> None:
    """One bias-corrected Adam update of ``param`` in place."""
    if grad is None:
        raise ContractError(f"Adam step on {param.name or 'parameter'} without a gradient.")
    if state.m.shape != param.data.shape:
        raise ContractError(f"Adam state shape {state.m.shape} does not match parameter {param.data.shape}.")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a named parameter set."""

    params: dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, p in self.params.items():
            if p.frozen:
                raise ContractError(f"Parameter '{name}' is frozen and cannot be optimized.")
            if not p.requires_grad:
                raise ContractError(f"Parameter '{name}' does not require a gradient.")
            if name not in self.states:
                self.states[name] = AdamState(
                    m=np.zeros_like(p.data), v=np.zeros_like(p.data),
                    lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            adam_step(p, p.grad, self.states[name])

    @property
    def step_count(self) -> int:
        return max((s.t for s in self.states.values()), default=0)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
