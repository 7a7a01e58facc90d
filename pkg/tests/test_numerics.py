import math

import numpy as np
import pytest

from openvocab.errors import NumericError, ShapeError
from openvocab.numerics import (
    Mlp,
    OptimizerState,
    adamw_step,
    cosine_lr,
    finite_diff_check,
    gelu,
    gelu_grad,
    mlp_backward,
    mlp_forward,
)


def gelu_reference(x):
    # direct evaluation of the tanh-approximation formula
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


class TestGelu:
    def test_zero_fixed_point(self):
        assert gelu(0.0) == 0.0

    def test_at_one(self):
        assert gelu(1.0) == pytest.approx(gelu_reference(1.0), abs=1e-12)
        assert gelu(1.0) == pytest.approx(0.8412, abs=5e-5)

    def test_large_x_asymptote(self):
        assert abs(gelu(10.0) - 10.0) < 1e-6

    def test_grad_matches_central_difference(self):
        h = 1e-6
        for x in np.linspace(-4.0, 4.0, 33):
            numeric = (gelu(x + h) - gelu(x - h)) / (2 * h)
            assert gelu_grad(x) == pytest.approx(numeric, abs=1e-7)


class TestMlpForward:
    def test_zero_weights_give_zero_outputs(self):
        rng = np.random.default_rng(0)
        model = Mlp.create([3, 4, 4, 2], rng)
        model.set_params([np.zeros_like(p) for p in model.params()])
        out, _ = mlp_forward(model, rng.normal(size=(5, 3)))
        assert np.all(out == 0.0)

    def test_unit_chain_composes_gelu_twice(self):
        model = Mlp(
            [np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))],
            [np.zeros(1), np.zeros(1), np.zeros(1)],
        )
        out, _ = mlp_forward(model, [[1.0]])
        expected = gelu_reference(gelu_reference(1.0))  # output layer is identity
        assert out[0, 0] == pytest.approx(expected, abs=1e-12)
        assert out[0, 0] == pytest.approx(0.6728, abs=5e-5)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        model = Mlp.create([4, 6, 6, 3], rng)
        x = rng.normal(size=(2, 4))
        out, _ = mlp_forward(model, x)
        flipped, _ = mlp_forward(model, np.ascontiguousarray(x[::-1]))
        np.testing.assert_array_equal(out, flipped[::-1])

    def test_dimension_mismatch(self):
        model = Mlp.create([4, 4, 4, 4], np.random.default_rng(0))
        with pytest.raises(ShapeError):
            mlp_forward(model, np.zeros((2, 5)))


class TestMlpBackward:
    def test_zero_grad_outputs(self):
        rng = np.random.default_rng(2)
        model = Mlp.create([3, 5, 5, 2], rng)
        out, cache = mlp_forward(model, rng.normal(size=(4, 3)))
        grads = mlp_backward(model, cache, np.zeros_like(out))
        assert all(np.all(g == 0.0) for g in grads)

    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(3)
        a = Mlp.create([3, 5, 5, 2], rng)
        b = Mlp.create([3, 4, 4, 2], rng)
        out, cache = mlp_forward(a, rng.normal(size=(4, 3)))
        with pytest.raises(ShapeError):
            mlp_backward(b, cache, np.zeros((4, 2)))

    def test_linear_net_closed_form(self):
        # single layer, identity activation: loss = sum(X @ W + b)
        # => dW = column sums of X broadcast over output columns
        rng = np.random.default_rng(4)
        model = Mlp.create([3, 2], rng)
        x = rng.normal(size=(5, 3))
        out, cache = mlp_forward(model, x)
        gw, gb = mlp_backward(model, cache, np.ones_like(out))
        np.testing.assert_allclose(gw, np.tile(x.sum(axis=0)[:, None], (1, 2)))
        np.testing.assert_allclose(gb, np.full(2, 5.0))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        model = Mlp.create([4, 6, 6, 3], rng)
        x = rng.normal(size=(7, 4))
        target = rng.normal(size=(7, 3))

        def loss_of(params):
            probe = model.copy()
            probe.set_params(params)
            out, _ = mlp_forward(probe, x)
            return float(((out - target) ** 2).sum())

        out, cache = mlp_forward(model, x)
        grads = mlp_backward(model, cache, 2.0 * (out - target))
        assert finite_diff_check(loss_of, model.params(), grads) <= 1e-4


class TestFiniteDiffCheck:
    def test_quadratic_exact(self):
        p = np.array([1.0, 2.0])
        err = finite_diff_check(
            lambda ps: float((ps[0] ** 2).sum()), [p], [2.0 * p], h=1e-5
        )
        assert err <= 1e-8

    def test_constant_loss(self):
        p = np.array([3.0, -1.0])
        err = finite_diff_check(lambda ps: 7.5, [p], [np.zeros(2)])
        assert err <= 1e-10

    def test_rejects_nonpositive_h(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda ps: 0.0, [np.zeros(1)], [np.zeros(1)], h=0.0)


class TestAdamW:
    def test_zero_grad_no_decay_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        state = OptimizerState.for_params(p, lr=0.1)
        out = adamw_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(out[0], p[0])
        assert state.step == 1

    def test_first_step_is_signed_lr(self):
        # bias corrections cancel at t=1: update ~ -lr * sign(g) for eps << |g|
        for g in (0.3, -4.0):
            p = [np.array([0.0])]
            state = OptimizerState.for_params(p, lr=0.01)
            out = adamw_step(p, [np.array([g])], state)
            assert out[0][0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)

    def test_decoupled_decay_shrinks(self):
        p = [np.array([2.0])]
        state = OptimizerState.for_params(p, lr=0.1, weight_decay=0.5)
        out = adamw_step(p, [np.zeros(1)], state)
        assert out[0][0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5))

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(5)
        p = [rng.normal(size=(3, 2)), rng.normal(size=2)]
        state = OptimizerState.for_params(p, lr=0.0)
        out = adamw_step(p, [rng.normal(size=(3, 2)), rng.normal(size=2)], state)
        for a, b in zip(out, p):
            np.testing.assert_array_equal(a, b)

    def test_nonfinite_grad_rejected(self):
        p = [np.array([1.0])]
        state = OptimizerState.for_params(p, lr=0.1)
        with pytest.raises(NumericError):
            adamw_step(p, [np.array([np.nan])], state)


class TestCosineLr:
    def test_warmup_endpoints(self):
        assert cosine_lr(0, 100, 10, 1e-3) == 0.0
        assert cosine_lr(10, 100, 10, 1e-3) == pytest.approx(1e-3)

    def test_post_warmup_midpoint(self):
        assert cosine_lr(55, 100, 10, 2.0) == pytest.approx(1.0)

    def test_continuity_at_warmup_boundary(self):
        before = cosine_lr(999, 100000, 1000, 1e-3)
        at = cosine_lr(1000, 100000, 1000, 1e-3)
        assert abs(before - at) < 2e-6

    def test_nonnegative_everywhere(self):
        for step in range(0, 101):
            assert cosine_lr(step, 100, 7, 0.5) >= 0.0

    def test_domain_checked(self):
        with pytest.raises(ValueError):
            cosine_lr(101, 100, 10, 1.0)
