"""Unit tests for the DiT vector field and flow-matching training and sampling."""

import numpy as np
import pytest

from src.action_flow.dit import DiTParams, dit_forward
from src.action_flow.flow import (
    SamplerConfig,
    action_loss,
    draw_flow_sample,
    euler_integrate,
    interpolate,
    sample_actions,
)
from src.autodiff import ops
from src.autodiff.gradcheck import grad_check
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, backward
from src.errors import ConfigError, ContractError, DimensionError

H = 7
D_CTX = 16


def context(seed=0, rows=12):
    return Tensor(np.random.default_rng(seed).normal(size=(rows, D_CTX)), requires_grad=True)


def chunk(seed=1):
    return np.random.default_rng(seed).uniform(-0.1, 0.1, size=(H, 3))


STATE = np.array([0.5, 0.5, 1.0, 0.0])


@pytest.fixture
def dit():
    return DiTParams.init(Rng(21), H, D_CTX, d=16, n_blocks=1, n_heads=4)


def silence(params):
    params.out.weight.data = np.zeros_like(params.out.weight.data)
    params.out.bias.data = np.zeros_like(params.out.bias.data)


# ──────────────────────────────────────────────
# Interpolation and sampling schedule
# ──────────────────────────────────────────────


class TestInterpolate:

    def test_endpoints(self):
        target, a0 = chunk(1), chunk(2)
        np.testing.assert_array_equal(interpolate(target, a0, 0.0), a0)
        np.testing.assert_array_equal(interpolate(target, a0, 1.0), target)

    def test_midpoint(self):
        np.testing.assert_array_equal(interpolate(np.ones((H, 3)), np.zeros((H, 3)), 0.5), 0.5)

    @pytest.mark.parametrize("t", [-1e-9, 1.5])
    def test_out_of_range(self, t):
        with pytest.raises(ContractError):
            interpolate(np.ones(3), np.zeros(3), t)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            interpolate(np.ones((H, 3)), np.zeros((H, 2)), 0.5)

    def test_flow_sample(self):
        target = chunk()
        sample = draw_flow_sample(target, Rng(3))
        assert 0.0 <= sample.t < 1.0
        assert sample.a0.shape == target.shape
        np.testing.assert_array_equal(sample.a_t, interpolate(target, sample.a0, sample.t))


class TestSampler:

    def test_step_count(self):
        assert SamplerConfig().n_steps == 10
        assert SamplerConfig(4).dt == 0.25
        with pytest.raises(ConfigError):
            SamplerConfig(0)

    def test_zero_field_returns_noise(self):
        a0 = chunk()
        np.testing.assert_array_equal(euler_integrate(a0, lambda a, t: np.zeros_like(a), SamplerConfig()), a0)

    @pytest.mark.parametrize("n", [1, 3, 10])
    def test_constant_field_is_exact(self, n):
        a0, c = chunk(1), chunk(2)
        out = euler_integrate(a0, lambda a, t: c, SamplerConfig(n))
        np.testing.assert_allclose(out, a0 + c, atol=1e-12)

    def test_times_visited(self):
        seen = []
        euler_integrate(np.zeros(1), lambda a, t: seen.append(t) or np.zeros(1), SamplerConfig(4))
        assert seen == [0.0, 0.25, 0.5, 0.75]


# ──────────────────────────────────────────────
# Vector field
# ──────────────────────────────────────────────


class TestDiTForward:

    def test_shape(self, dit):
        assert dit_forward(chunk(), 0.4, STATE, context(), dit).shape == (H, 3)
        assert dit.horizon == H

    def test_zero_output_projection(self, dit):
        silence(dit)
        np.testing.assert_array_equal(dit_forward(chunk(), 0.4, STATE, context(), dit).data, 0.0)

    def test_wrong_chunk_shape(self, dit):
        with pytest.raises(DimensionError):
            dit_forward(np.zeros((H - 1, 3)), 0.4, STATE, context(), dit)

    def test_depends_on_context_and_time(self, dit):
        a = dit_forward(chunk(), 0.4, STATE, context(0), dit).data
        assert np.linalg.norm(a - dit_forward(chunk(), 0.4, STATE, context(1), dit).data) > 0
        assert np.linalg.norm(a - dit_forward(chunk(), 0.9, STATE, context(0), dit).data) > 0

    def test_gradient_wrt_noisy_chunk(self, dit):
        w = ops.constant(np.random.default_rng(9).normal(size=(H, 3)))
        h = context()

        def f(a):
            return ops.sum_all(ops.mul(dit_forward(a, 0.3, STATE, h, dit), w))

        assert grad_check(f, chunk()) < 1e-4


# ──────────────────────────────────────────────
# Training objective
# ──────────────────────────────────────────────


class TestActionLoss:

    def test_silent_field_matches_closed_form(self, dit):
        silence(dit)
        target = chunk()
        sample = draw_flow_sample(target, Rng(5))
        loss = action_loss([target], [STATE], [context()], dit, Rng(5)).item()
        assert loss == pytest.approx(np.mean((target - sample.a0) ** 2), abs=1e-12)

    def test_batch_mean(self, dit):
        silence(dit)
        targets = [chunk(1), chunk(2)]
        rng = Rng(6)
        expected = np.mean([np.mean((a - draw_flow_sample(a, rng).a0) ** 2) for a in targets])
        loss = action_loss(targets, [STATE, STATE], [context(), context(1)], dit, Rng(6)).item()
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_gradients_reach_context(self, dit):
        h = context()
        with Tape() as tape:
            loss = action_loss([chunk()], [STATE], [h], dit, Rng(7))
        backward(loss, tape)
        assert np.abs(h.grad).sum() > 0
        assert np.abs(dit.out.weight.grad).sum() > 0

    def test_mismatched_batch(self, dit):
        with pytest.raises(ContractError):
            action_loss([chunk(), chunk()], [STATE], [context()], dit, Rng(0))
        with pytest.raises(ContractError):
            action_loss([], [], [], dit, Rng(0))


class TestSampleActions:

    def test_shape_and_determinism(self, dit):
        a = sample_actions(STATE, context(), dit, SamplerConfig(3), Rng(8))
        b = sample_actions(STATE, context(), dit, SamplerConfig(3), Rng(8))
        assert a.shape == (H, 3)
        assert np.array_equal(a, b)

    def test_silent_field_returns_noise(self, dit):
        silence(dit)
        out = sample_actions(STATE, context(), dit, SamplerConfig(), Rng(9))
        np.testing.assert_array_equal(out, Rng(9).normal((H, 3)))

    def test_sampling_leaves_no_gradients(self, dit):
        h = context()
        sample_actions(STATE, h, dit, SamplerConfig(2), Rng(10))
        assert h.grad is None
        assert dit.out.weight.grad is None
