import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitprior.mlp import (
    LEAKY_SLOPE,
    MlpParams,
    NoiseInput,
    backward,
    draw_noise,
    forward,
    init_params,
)


def straight_line_forward(params, rho):
    # independent re-evaluation with explicit loops
    h, g = params.w1.shape
    n = params.w2.shape[0]
    z1 = np.empty(h)
    for i in range(h):
        acc = params.b1[i]
        for k in range(g):
            acc += params.w1[i, k] * rho[k]
        z1[i] = acc
    a1 = np.array([z if z >= 0 else LEAKY_SLOPE * z for z in z1])
    out = np.empty(n)
    for i in range(n):
        acc = params.b2[i]
        for k in range(h):
            acc += params.w2[i, k] * a1[k]
        out[i] = 1.0 / (1.0 + np.exp(-acc))
    return out


def finite_difference_grad(params, noise, dl_dout, step=1e-6):
    g, h, n = params.g, params.h, params.n
    flat = params.to_flat()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        down = flat.copy()
        down[i] -= step
        fu, _ = forward(MlpParams.from_flat(g, h, n, up), noise)
        fd_, _ = forward(MlpParams.from_flat(g, h, n, down), noise)
        fd[i] = (dl_dout @ fu - dl_dout @ fd_) / (2 * step)
    return fd


class TestInit:
    def test_published_architecture_parameter_count(self):
        params = init_params(328, 2000, 3228, 0)
        assert params.q == 328 * 2000 + 2000 + 3228 * 2000 + 3228

    def test_deterministic(self):
        a = init_params(5, 7, 3, seed=42)
        b = init_params(5, 7, 3, seed=42)
        assert np.array_equal(a.to_flat(), b.to_flat())

    def test_minimal_net(self):
        assert init_params(1, 1, 1, 0).q == 4

    def test_bounds_and_zero_biases(self):
        params = init_params(100, 50, 30, 1)
        assert np.all(np.abs(params.w1) <= 1 / np.sqrt(100))
        assert np.all(np.abs(params.w2) <= 1 / np.sqrt(50))
        assert np.all(params.b1 == 0) and np.all(params.b2 == 0)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            init_params(0, 1, 1, 0)


class TestForward:
    def test_zero_params_give_half(self):
        params = MlpParams(np.zeros((4, 3)), np.zeros(4), np.zeros((5, 4)), np.zeros(5))
        out, _ = forward(params, draw_noise(3, 0))
        assert np.all(out == 0.5)

    def test_single_unit_zero_w1(self):
        params = MlpParams(np.zeros((1, 1)), np.zeros(1), np.array([[3.7]]), np.zeros(1))
        out, _ = forward(params, NoiseInput(np.array([0.9])))
        assert out[0] == 0.5  # hidden activation is zero regardless of w2

    def test_matches_straight_line_oracle(self):
        params = init_params(6, 9, 7, 11)
        noise = draw_noise(6, 12)
        out, _ = forward(params, noise)
        expected = straight_line_forward(params, noise.rho)
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_output_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            params = init_params(4, 8, 6, rng)
            out, _ = forward(params, NoiseInput(rng.uniform(-2, 2, 4)))
            assert np.all(out > 0) and np.all(out < 1)

    def test_dimension_mismatch(self):
        params = init_params(4, 8, 6, 0)
        with pytest.raises(ValueError):
            forward(params, draw_noise(5, 0))


class TestBackward:
    def test_zero_upstream_gradient(self):
        params = init_params(3, 4, 5, 0)
        noise = draw_noise(3, 1)
        _, cache = forward(params, noise)
        grads = backward(params, cache, np.zeros(5))
        assert np.all(grads.to_flat() == 0)

    def test_matches_finite_differences(self):
        params = init_params(2, 2, 2, 5)
        noise = draw_noise(2, 6)
        dl = np.random.default_rng(7).normal(size=2)
        _, cache = forward(params, noise)
        analytic = backward(params, cache, dl).to_flat()
        fd = finite_difference_grad(params, noise, dl)
        assert np.linalg.norm(fd - analytic) / np.linalg.norm(analytic) < 1e-5

    def test_matches_finite_differences_medium_net(self):
        params = init_params(10, 20, 10, 8)
        noise = draw_noise(10, 9)
        dl = np.random.default_rng(10).normal(size=10)
        _, cache = forward(params, noise)
        analytic = backward(params, cache, dl).to_flat()
        fd = finite_difference_grad(params, noise, dl)
        assert np.linalg.norm(fd - analytic) / np.linalg.norm(analytic) < 1e-5

    def test_linear_in_upstream_gradient(self):
        params = init_params(3, 5, 4, 2)
        noise = draw_noise(3, 3)
        _, cache = forward(params, noise)
        dl = np.random.default_rng(4).normal(size=4)
        single = backward(params, cache, dl).to_flat()
        double = backward(params, cache, 2 * dl).to_flat()
        assert np.array_equal(double, 2 * single)

    def test_out_buffer_matches_allocating_path(self):
        params = init_params(4, 6, 5, 13)
        noise = draw_noise(4, 14)
        _, cache = forward(params, noise)
        dl = np.random.default_rng(15).normal(size=5)
        plain = backward(params, cache, dl).to_flat()
        buf = np.empty(params.q)
        views = MlpParams.from_flat(4, 6, 5, buf)
        backward(params, cache, dl, out=views)
        assert np.array_equal(buf, plain)

    def test_leaky_derivative_at_zero_is_one(self):
        # craft z1 == 0 exactly: w1 = 0, b1 = 0
        params = MlpParams(np.zeros((1, 1)), np.zeros(1), np.array([[2.0]]), np.zeros(1))
        _, cache = forward(params, NoiseInput(np.array([1.0])))
        grads = backward(params, cache, np.array([1.0]))
        # d out / d b1 = sigmoid' * w2 * leaky'(0) = 0.25 * 2 * 1
        assert grads.b1[0] == pytest.approx(0.5, abs=1e-15)


class TestDeterminism:
    def test_bitwise_repeatable_forward(self):
        params = init_params(8, 16, 12, 3)
        noise = draw_noise(8, 4)
        a, _ = forward(params, noise)
        b, _ = forward(params, noise)
        assert np.array_equal(a, b)


class TestFlat:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
    def test_flat_round_trip(self, g, h, n, seed):
        params = init_params(g, h, n, seed)
        rebuilt = MlpParams.from_flat(g, h, n, params.to_flat())
        for a, b in zip(
            (params.w1, params.b1, params.w2, params.b2),
            (rebuilt.w1, rebuilt.b1, rebuilt.w2, rebuilt.b2),
        ):
            assert np.array_equal(a, b)

    def test_from_flat_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            MlpParams.from_flat(2, 2, 2, np.zeros(11))
