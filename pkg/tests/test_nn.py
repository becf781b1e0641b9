"""Unit tests for the dense primitives: exact values and finite differences."""

import numpy as np
import pytest

from robustmos.nn import (
    LayerNormParams,
    LinearLayer,
    adam_init,
    adam_step,
    cross_entropy_with_grad,
    grad_check,
    layernorm_backward,
    layernorm_forward,
    layernorm_forward_backward,
    linear_backward,
    linear_forward,
    linear_init,
    relu_forward_backward,
    softmax,
)


def central_diff(f, arr, idx, h=1e-5):
    flat = arr.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + h
    fp = f()
    flat[idx] = orig - h
    fm = f()
    flat[idx] = orig
    return (fp - fm) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


class TestLinear:
    def test_identity(self):
        layer = LinearLayer(weight=np.eye(2), bias=np.zeros(2))
        assert np.allclose(linear_forward(layer, [1.0, 2.0]), [1.0, 2.0])

    def test_hand_dot_product(self):
        layer = LinearLayer(weight=[[1.0, 1.0]], bias=[0.5])
        assert np.allclose(linear_forward(layer, [1.0, 2.0]), [3.5])

    def test_zero_map(self):
        layer = LinearLayer(weight=np.zeros((3, 2)), bias=[1.0, 2.0, 3.0])
        assert np.allclose(linear_forward(layer, [9.0, -4.0]), [1.0, 2.0, 3.0])

    def test_dimension_mismatch(self):
        layer = LinearLayer(weight=np.eye(2), bias=np.zeros(2))
        with pytest.raises(ValueError):
            linear_forward(layer, [1.0, 2.0, 3.0])

    def test_batched_forward_matches_rows(self):
        rng = np.random.default_rng(0)
        layer = linear_init(4, 3, rng)
        x = rng.normal(size=(5, 4))
        batched = linear_forward(layer, x)
        for i in range(5):
            assert np.allclose(batched[i], linear_forward(layer, x[i]))


class TestLinearBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(1)
        layer = linear_init(3, 2, rng)
        gw, gb, gx = linear_backward(layer, rng.normal(size=3), np.zeros(2))
        assert not gw.any() and not gb.any() and not gx.any()

    def test_scalar_chain_rule(self):
        layer = LinearLayer(weight=[[2.0]], bias=[0.0])
        gw, gb, gx = linear_backward(layer, [3.0], [1.0])
        assert gw[0, 0] == 3.0
        assert gb[0] == 1.0
        assert gx[0] == 2.0

    def test_finite_difference(self):
        rng = np.random.default_rng(2)
        layer = linear_init(5, 4, rng)
        x = rng.normal(size=5)
        c = rng.normal(size=4)  # fixed weights make the output a scalar loss
        gw, gb, gx = linear_backward(layer, x, c)

        def loss():
            return float(c @ linear_forward(layer, x))

        for arr, grad in ((layer.weight, gw), (layer.bias, gb), (x, gx)):
            for idx in range(arr.size):
                assert rel_err(grad.reshape(-1)[idx], central_diff(loss, arr, idx)) < 1e-6

    def test_shape_error(self):
        layer = LinearLayer(weight=np.eye(2), bias=np.zeros(2))
        with pytest.raises(ValueError):
            linear_backward(layer, [1.0, 2.0], [1.0, 2.0, 3.0])


class TestRelu:
    def test_definition(self):
        y, _ = relu_forward_backward(np.array([-1.0, 0.0, 2.0]), np.zeros(3))
        assert np.array_equal(y, [0.0, 0.0, 2.0])

    def test_mask(self):
        _, gx = relu_forward_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0]))
        assert np.array_equal(gx, [0.0, 5.0])

    def test_finite_difference_away_from_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=8)
        x[np.abs(x) < 0.1] += 0.2  # keep probes away from the kink
        c = rng.normal(size=8)
        _, gx = relu_forward_backward(x, c)

        def loss():
            return float(c @ np.maximum(x, 0.0))

        for idx in range(8):
            assert rel_err(gx[idx], central_diff(loss, x, idx)) < 1e-6


class TestLayerNorm:
    def test_two_point_normalization(self):
        p = LayerNormParams(gain=np.ones(2), bias=np.zeros(2), epsilon=1e-10)
        y, _ = layernorm_forward(p, np.array([1.0, 3.0]))
        assert np.allclose(y, [-1.0, 1.0], atol=1e-5)

    def test_constant_input_gives_bias(self):
        p = LayerNormParams(gain=np.ones(3), bias=np.array([1.0, 2.0, 3.0]))
        y, _ = layernorm_forward(p, np.full(3, 7.0))
        assert np.allclose(y, [1.0, 2.0, 3.0])

    def test_finite_difference_dim8(self):
        rng = np.random.default_rng(4)
        p = LayerNormParams(gain=rng.normal(size=8), bias=rng.normal(size=8))
        x = rng.normal(size=8)
        c = rng.normal(size=8)

        def loss():
            return float(c @ layernorm_forward(p, x)[0])

        _, (g_gain, g_bias, g_x) = layernorm_forward_backward(p, x, c)
        for arr, grad in ((p.gain, g_gain), (p.bias, g_bias), (x, g_x)):
            for idx in range(arr.size):
                assert rel_err(grad.reshape(-1)[idx], central_diff(loss, arr, idx)) < 1e-5

    def test_batch_gradients_sum(self):
        rng = np.random.default_rng(5)
        p = LayerNormParams(gain=rng.normal(size=4), bias=rng.normal(size=4))
        x = rng.normal(size=(3, 4))
        u = rng.normal(size=(3, 4))
        y, cache = layernorm_forward(p, x)
        g_gain, g_bias, g_x = layernorm_backward(p, cache, u)
        per_row = [layernorm_forward_backward(p, x[i], u[i])[1] for i in range(3)]
        assert np.allclose(g_gain, sum(g[0] for g in per_row))
        assert np.allclose(g_bias, sum(g[1] for g in per_row))
        assert np.allclose(g_x, np.stack([g[2] for g in per_row]))


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_closed_form(self):
        assert np.allclose(softmax([np.log(2.0), 0.0]), [2 / 3, 1 / 3])

    def test_extreme_logits_no_overflow(self):
        p = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert np.allclose(p, [1.0, 0.0])

    def test_sums_and_translation_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            z = rng.normal(scale=5.0, size=rng.integers(2, 16))
            p = softmax(z)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(np.abs(softmax(z + 13.7) - p) < 1e-12)


class TestCrossEntropy:
    def test_perfect_prediction(self):
        loss, _ = cross_entropy_with_grad(np.array([0.0, 1.0, 0.0]), 1)
        assert loss == 0.0

    def test_uniform_three(self):
        loss, _ = cross_entropy_with_grad(np.full(3, 1 / 3), 2)
        assert abs(loss - np.log(3.0)) < 1e-12

    def test_half(self):
        loss, _ = cross_entropy_with_grad(np.array([0.5, 0.5]), 0)
        assert abs(loss - np.log(2.0)) < 1e-12

    def test_logit_gradient(self):
        p = softmax(np.array([0.3, -0.2, 1.0]))
        _, grad = cross_entropy_with_grad(p, 1)
        expected = p.copy()
        expected[1] -= 1.0
        assert np.allclose(grad, expected)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_with_grad(np.array([0.5, 0.5]), 2)


class TestAdam:
    def _params(self):
        return {"w": np.array([1.0, -2.0]), "b": np.array([[0.5]])}

    def test_zero_gradient_keeps_params(self):
        params = self._params()
        state = adam_init(params)
        adam_step(state, params, {"w": np.zeros(2), "b": np.zeros((1, 1))})
        assert np.array_equal(params["w"], [1.0, -2.0])
        assert np.array_equal(params["b"], [[0.5]])

    def test_first_step_magnitude_is_learning_rate(self):
        # bias correction makes the first update a near-sign step of size lr
        params = {"w": np.array([0.0])}
        state = adam_init(params, learning_rate=1e-3)
        adam_step(state, params, {"w": np.array([0.37])})
        assert abs(abs(params["w"][0]) - 1e-3) < 1e-8
        assert params["w"][0] < 0

    def test_determinism(self):
        runs = []
        for _ in range(2):
            params = self._params()
            state = adam_init(params)
            for step in range(3):
                grads = {"w": np.full(2, 0.1 * (step + 1)), "b": np.full((1, 1), -0.2)}
                adam_step(state, params, grads)
            runs.append((params["w"].copy(), params["b"].copy(), state.step))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert np.array_equal(runs[0][1], runs[1][1])

    def test_shape_error(self):
        params = self._params()
        state = adam_init(params)
        with pytest.raises(ValueError):
            adam_step(state, params, {"w": np.zeros(3), "b": np.zeros((1, 1))})


class TestGradCheck:
    def test_quadratic_closed_form(self):
        params = {"p": np.array([3.0])}

        def value_and_grad(p):
            return float(p["p"][0] ** 2), {"p": 2.0 * p["p"]}

        assert grad_check(value_and_grad, params, num_probes=5) < 1e-9

    def test_corrupted_gradient_detected(self):
        params = {"p": np.array([3.0, -1.5])}

        def corrupted(p):
            return float(np.sum(p["p"] ** 2)), {"p": 4.0 * p["p"]}  # x2 too large

        err = grad_check(corrupted, params, num_probes=10)
        assert abs(err - 0.5) < 1e-6

    def test_randomized_composite_network(self):
        # linear -> relu -> layernorm -> linear, random shapes up to 32
        rng = np.random.default_rng(7)
        for trial in range(3):
            dims = rng.integers(2, 33, size=3)
            first = linear_init(dims[0], dims[1], rng)
            norm = LayerNormParams(gain=rng.normal(size=dims[1]), bias=rng.normal(size=dims[1]))
            second = linear_init(dims[1], dims[2], rng)
            x = rng.normal(size=dims[0])
            c = rng.normal(size=dims[2])
            params = {
                "w1": first.weight, "b1": first.bias,
                "gain": norm.gain, "beta": norm.bias,
                "w2": second.weight, "b2": second.bias,
            }

            def value_and_grad(_):
                pre = linear_forward(first, x)
                act, _ = relu_forward_backward(pre, np.zeros_like(pre))
                normed, ln_cache = layernorm_forward(norm, act)
                out = linear_forward(second, normed)
                value = float(c @ out)
                gw2, gb2, d_normed = linear_backward(second, normed, c)
                g_gain, g_beta, d_act = layernorm_backward(norm, ln_cache, d_normed)
                d_pre = np.where(pre > 0.0, d_act, 0.0)
                gw1, gb1, _ = linear_backward(first, x, d_pre)
                return value, {
                    "w1": gw1, "b1": gb1, "gain": g_gain, "beta": g_beta,
                    "w2": gw2, "b2": gb2,
                }

            err = grad_check(value_and_grad, params, num_probes=40, seed=trial)
            assert err < 1e-4

    def test_forward_determinism(self):
        rng = np.random.default_rng(8)
        layer = linear_init(6, 6, rng)
        x = rng.normal(size=6)
        a = linear_forward(layer, x)
        b = linear_forward(layer, x)
        assert np.array_equal(a, b)
