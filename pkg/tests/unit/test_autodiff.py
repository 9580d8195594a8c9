"""Unit tests for the reverse-mode autodiff core: primitives, losses, tape, Adam and the random stream."""

import math

import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.gradcheck import grad_check
from src.autodiff.losses import cross_entropy_loss, mse_loss
from src.autodiff.optim import Adam, AdamState, adam_step
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, backward
from src.errors import ContractError, DimensionError, NumericError, TokenIndexError

GRAD_TOL = 1e-6


def weighted(y: Tensor, seed: int = 99) -> Tensor:
    """Scalar probe of a tensor-valued function: sum(y * W) for a fixed random W."""
    w = np.random.default_rng(seed).normal(size=y.shape)
    return ops.sum_all(ops.mul(y, ops.constant(w)))


def point(shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(size=shape) * scale


# ──────────────────────────────────────────────
# Forward values
# ──────────────────────────────────────────────


class TestMatmul:

    def test_identity(self):
        out = ops.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_hand_arithmetic(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\[2, 3\].*\[2, 3\]"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched(self):
        a, b = point((2, 3, 4)), point((2, 4, 5), seed=1)
        np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, a @ b)


class TestSoftmax:

    def test_symmetric(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_logits_are_stable(self):
        np.testing.assert_allclose(ops.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_matches_direct_evaluation(self):
        e = np.exp(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(ops.softmax(Tensor([1.0, 2.0, 3.0])).data, e / e.sum(), rtol=1e-14)

    def test_rows_sum_to_one(self):
        out = ops.softmax(Tensor(point((6, 9), scale=5.0))).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert (out >= 0).all()

    def test_mask_zeroes_entries(self):
        mask = np.array([[True, False, True]])
        out = ops.softmax(Tensor([[1.0, 50.0, 1.0]]), mask).data
        np.testing.assert_allclose(out, [[0.5, 0.0, 0.5]])

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            ops.softmax(Tensor([1.0, np.nan]))

    def test_fully_masked_row(self):
        with pytest.raises(ContractError):
            ops.softmax(Tensor([[1.0, 2.0]]), np.array([[False, False]]))


class TestLayerNorm:

    def test_constant_row_gives_zeros(self):
        out = ops.layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_zero_gain_gives_beta(self):
        beta = np.arange(5.0)
        out = ops.layer_norm(Tensor(point((3, 5))), Tensor(np.zeros(5)), Tensor(beta))
        np.testing.assert_allclose(out.data, np.broadcast_to(beta, (3, 5)))

    def test_rows_normalised(self):
        out = ops.layer_norm(Tensor(point((4, 8), scale=3.0)), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


class TestLosses:

    def test_mse_identity(self):
        x = point((3, 3))
        assert mse_loss(Tensor(x), Tensor(x)).item() == 0.0

    def test_mse_hand(self):
        assert mse_loss(Tensor([1.0, 1.0]), Tensor([0.0, 0.0])).item() == 1.0

    def test_mse_oracle(self):
        a, b = point((4, 4)), point((4, 4), seed=1)
        oracle = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / 16
        assert abs(mse_loss(Tensor(a), Tensor(b)).item() - oracle) < 1e-10

    def test_mse_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_ce_uniform(self):
        assert cross_entropy_loss(Tensor(np.zeros((2, 4))), [0, 3]).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_ce_confident(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1e6
        assert cross_entropy_loss(Tensor(logits), [2]).item() < 1e-12

    def test_ce_oracle(self):
        logits = point((3, 5), scale=2.0)
        targets = [4, 0, 2]
        oracle = 0.0
        for row, t in zip(logits, targets):
            m = max(row)
            oracle += -(row[t] - m - math.log(sum(math.exp(v - m) for v in row)))
        oracle /= 3
        assert abs(cross_entropy_loss(Tensor(logits), targets).item() - oracle) < 1e-10

    def test_ce_bad_target(self):
        with pytest.raises(TokenIndexError):
            cross_entropy_loss(Tensor(np.zeros((2, 4))), [0, 4])

    def test_ce_length_mismatch(self):
        with pytest.raises(DimensionError):
            cross_entropy_loss(Tensor(np.zeros((2, 4))), [0])


# ──────────────────────────────────────────────
# Gradients
# ──────────────────────────────────────────────


UNARY_CASES = {
    "scale": ((3, 4), lambda x: ops.scale(x, -2.5)),
    "gelu": ((3, 4), ops.gelu),
    "transpose": ((3, 4), ops.transpose),
    "permute": ((2, 3, 4), lambda x: ops.permute(x, (2, 0, 1))),
    "reshape": ((3, 4), lambda x: ops.reshape(x, (6, 2))),
    "slice_rows": ((5, 3), lambda x: ops.slice_rows(x, 1, 4)),
    "softmax": ((3, 5), ops.softmax),
    "masked_softmax": ((4, 4), lambda x: ops.softmax(x, np.tril(np.ones((4, 4), dtype=bool)))),
    "mean_all": ((3, 4), ops.mean_all),
    "square": ((2, 3), lambda x: ops.mul(x, x)),
    "fan_out": ((3, 2), lambda x: ops.concat_rows([x, ops.scale(x, 3.0), x])),
    "take_rows_repeated": ((4, 3), lambda x: ops.take_rows(x, [0, 2, 2, 3, 0])),
}


class TestPrimitiveGradients:

    @pytest.mark.parametrize("name", sorted(UNARY_CASES))
    def test_unary(self, name):
        shape, fn = UNARY_CASES[name]
        for seed in range(5):
            assert grad_check(lambda x: weighted(fn(x)), point(shape, seed)) < GRAD_TOL

    def test_matmul_both_sides(self):
        a, b = point((3, 4)), point((4, 2), seed=1)
        assert grad_check(lambda x: weighted(ops.matmul(x, ops.constant(b))), a) < GRAD_TOL
        assert grad_check(lambda x: weighted(ops.matmul(ops.constant(a), x)), b) < GRAD_TOL

    def test_batched_matmul(self):
        b = point((2, 4, 3), seed=1)
        assert grad_check(lambda x: weighted(ops.matmul(x, ops.constant(b))), point((2, 5, 4))) < GRAD_TOL

    def test_add_sub_mul(self):
        other = ops.constant(point((3, 3), seed=4))
        for fn in (ops.add, ops.sub, ops.mul):
            assert grad_check(lambda x: weighted(fn(x, other)), point((3, 3))) < GRAD_TOL

    def test_add_bias_both_inputs(self):
        x0, b0 = point((4, 3)), point(3, seed=2)
        assert grad_check(lambda x: weighted(ops.add_bias(x, ops.constant(b0))), x0) < GRAD_TOL
        assert grad_check(lambda b: weighted(ops.add_bias(ops.constant(x0), b)), b0) < GRAD_TOL

    def test_mul_row_both_inputs(self):
        x0, r0 = point((4, 3)), point(3, seed=2)
        assert grad_check(lambda x: weighted(ops.mul_row(x, ops.constant(r0))), x0) < GRAD_TOL
        assert grad_check(lambda r: weighted(ops.mul_row(ops.constant(x0), r)), r0) < GRAD_TOL

    def test_layer_norm_all_inputs(self):
        x0, g0, b0 = point((2, 8)), 1.0 + point(8, seed=1, scale=0.1), point(8, seed=2)
        assert grad_check(lambda x: weighted(ops.layer_norm(x, ops.constant(g0), ops.constant(b0))), x0) < GRAD_TOL
        assert grad_check(lambda g: weighted(ops.layer_norm(ops.constant(x0), g, ops.constant(b0))), g0) < GRAD_TOL
        assert grad_check(lambda b: weighted(ops.layer_norm(ops.constant(x0), ops.constant(g0), b)), b0) < GRAD_TOL

    def test_losses(self):
        target = ops.constant(point((3, 4), seed=5))
        assert grad_check(lambda x: mse_loss(x, target), point((3, 4))) < GRAD_TOL
        assert grad_check(lambda x: cross_entropy_loss(x, [1, 0, 3]), point((3, 4))) < GRAD_TOL

    def test_square_at_three(self):
        assert grad_check(lambda x: ops.mul(x, x), np.array(3.0)) < 1e-8


class TestBackward:

    def test_identity_loss(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            pass
        backward(x, tape)
        assert x.grad == 1.0

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_topological_order(self):
        x = Tensor(point((2, 2)), requires_grad=True)
        with Tape() as tape:
            ops.sum_all(ops.gelu(ops.matmul(x, x)))
        for k, node in enumerate(tape.nodes):
            assert all(i is None or i < k for i in node.input_ids)

    def test_no_tape_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        y = ops.scale(x, 2.0)
        assert not y.requires_grad
        assert y.node_id is None

    def test_linearity(self):
        x0 = point((3, 4))

        def grad_of(fn):
            x = Tensor(x0, requires_grad=True)
            with Tape() as tape:
                loss = fn(x)
            backward(loss, tape)
            return x.grad

        l1 = lambda x: weighted(ops.gelu(x), seed=1)  # noqa: E731
        l2 = lambda x: weighted(ops.softmax(x), seed=2)  # noqa: E731
        combined = grad_of(lambda x: ops.add(ops.scale(l1(x), 2.0), ops.scale(l2(x), -0.5)))
        np.testing.assert_allclose(combined, 2.0 * grad_of(l1) - 0.5 * grad_of(l2), atol=1e-10)


# ──────────────────────────────────────────────
# Adam
# ──────────────────────────────────────────────


class TestAdam:

    def test_zero_gradient_leaves_parameter(self):
        p = Tensor([1.5, -2.0], requires_grad=True)
        adam_step(p, np.zeros(2), AdamState(m=np.zeros(2), v=np.zeros(2)))
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Tensor(0.0, requires_grad=True)
        state = AdamState(m=np.zeros(()), v=np.zeros(()), lr=0.1)
        adam_step(p, np.array(1.0), state)
        assert p.item() == pytest.approx(-0.1, abs=1e-8)
        assert state.t == 1

    def test_missing_gradient(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            adam_step(p, None, AdamState(m=np.zeros(1), v=np.zeros(1)))

    def test_frozen_parameter_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        p.frozen = True
        with pytest.raises(ContractError, match="frozen"):
            Adam({"w": p})

    def test_deterministic(self):
        results = []
        for _ in range(2):
            w = Tensor(point((3, 3)), requires_grad=True)
            opt = Adam({"w": w}, lr=0.01)
            for _ in range(3):
                opt.zero_grad()
                with Tape() as tape:
                    loss = weighted(ops.gelu(w))
                backward(loss, tape)
                opt.step()
            results.append(w.data.copy())
            assert opt.step_count == 3
        assert np.array_equal(results[0], results[1])


# ──────────────────────────────────────────────
# Random stream
# ──────────────────────────────────────────────


class TestRng:

    def test_reproducible(self):
        assert np.array_equal(Rng(7).normal((4, 3)), Rng(7).normal((4, 3)))

    def test_state_round_trip(self):
        rng = Rng(11)
        rng.uniform(5)
        resumed = Rng.from_state(rng.state())
        assert np.array_equal(rng.uniform(3), resumed.uniform(3))

    def test_uniform_range(self):
        u = Rng(1).uniform(1000, 0.2, 0.4)
        assert u.min() >= 0.2 and u.max() < 0.4

    def test_integers_range(self):
        draws = Rng(2).integers(3, 6, size=500)
        assert set(draws.tolist()) == {3, 4, 5}

    def test_empty_integer_range(self):
        with pytest.raises(ValueError):
            Rng(0).integers(2, 2)

    def test_spawned_streams_differ(self):
        root = Rng(5)
        assert root.spawn(1).seed != root.spawn(2).seed
        assert root.spawn(1).seed == Rng(5).spawn(1).seed

    def test_permutation(self):
        assert sorted(Rng(3).permutation(10).tolist()) == list(range(10))

    def test_normal_moments(self):
        z = Rng(4).normal(20000)
        assert abs(z.mean()) < 0.03
        assert abs(z.std() - 1.0) < 0.03
