"""
Flow matching on action chunks.

Training draws one (t, a_0) per example, t ~ U(0, 1) and a_0 ~ N(0, I):

    a_t    = t A + (1 - t) a_0
    target = A - a_0
    loss   = mean((v(a_t, t, ...) - target)^2)

Sampling integrates the learned field with forward Euler from t = 0 to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.autodiff import ops
from src.autodiff.losses import mse_loss
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, ContractError, DimensionError
from src.action_flow.dit import A_DIM, DiTParams, dit_forward

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 10

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ConfigError(f"Sampler needs at least one step, got {self.n_steps}.")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps


@dataclass
class FlowSample:
    a0: np.ndarray
    t: float
    a_t: np.ndarray


def interpolate(target: np.ndarray, a0: np.ndarray, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"Interpolation time t={t} lies outside [0, 1].")
    target, a0 = np.asarray(target, dtype=np.float64), np.asarray(a0, dtype=np.float64)
    if target.shape != a0.shape:
        raise DimensionError(f"interpolate: shape mismatch {list(target.shape)} vs {list(a0.shape)}.")
    if t == 1.0:
        return target.copy()
    if t == 0.0:
        return a0.copy()
    return t * target + (1.0 - t) * a0


def draw_flow_sample(target: np.ndarray, rng: Rng) -> FlowSample:
    """One (t, a_0) draw for one example."""
    t = rng.uniform()
    a0 = rng.normal(np.shape(target))
    return FlowSample(a0=a0, t=t, a_t=interpolate(target, a0, t))


def flow_loss(target: np.ndarray, sample: FlowSample, state: np.ndarray, h_vlm: Tensor,
              params: DiTParams) -> Tensor:
    v = dit_forward(sample.a_t, sample.t, state, h_vlm, params)
    return mse_loss(v, ops.constant(np.asarray(target, dtype=np.float64) - sample.a0))


def action_loss(targets: list[np.ndarray], states: list[np.ndarray], h_vlms: list[Tensor], params: DiTParams,
                rng: Rng) -> Tensor:
    """Batch mean of per-example flow-matching MSE."""
    if not targets or not (len(targets) == len(states) == len(h_vlms)):
        raise ContractError("action_loss needs equally sized, non-empty batches.")
    losses = [flow_loss(a, draw_flow_sample(a, rng), s, h, params) for a, s, h in zip(targets, states, h_vlms)]
    return ops.scale(ops.add_n(losses), 1.0 / len(losses))


def euler_integrate(a0: np.ndarray, velocity: VelocityFn, cfg: SamplerConfig) -> np.ndarray:
    a = np.array(a0, dtype=np.float64)
    for k in range(cfg.n_steps):
        a = a + cfg.dt * velocity(a, k / cfg.n_steps)
    return a


def sample_actions(state: np.ndarray, h_vlm: Tensor, params: DiTParams, cfg: SamplerConfig, rng: Rng) -> np.ndarray:
    """Transport Gaussian noise to an action chunk [H, 3]; clamping is the caller's job."""
    context = h_vlm.detach()
    a0 = rng.normal((params.horizon, A_DIM))
    return euler_integrate(a0, lambda a, t: dit_forward(a, t, state, context, params).data, cfg)
