import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pings import autodiff as ad
from pings.nn import mlp_forward

from helpers import gradient_error, tiny_params


class TestPrimitives:
    def test_linear_gradient_matches_closed_form(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3))
        tape = ad.Tape()
        w = tape.param("W", rng.normal(size=(2, 3)))
        b = tape.param("b", rng.normal(size=2))
        loss = ad.sum_(ad.linear(tape.const(x), w, b))
        g = tape.backward(loss)
        np.testing.assert_allclose(g["W"], np.ones((5, 2)).T @ x)
        np.testing.assert_allclose(g["b"], [5.0, 5.0])

    def test_unused_parameter_gets_zero_gradient(self):
        tape = ad.Tape()
        a = tape.param("a", np.array([1.0, 2.0]))
        tape.param("unused", np.ones(3))
        g = tape.backward(ad.sum_(ad.square(a)))
        np.testing.assert_array_equal(g["unused"], np.zeros(3))
        np.testing.assert_array_equal(g["a"], [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        tape = ad.Tape()
        a = tape.param("a", np.ones(3))
        with pytest.raises(ValueError):
            tape.backward(a * 2.0)

    def test_broadcast_mul_unbroadcasts(self):
        tape = ad.Tape()
        col = tape.param("c", np.array([[1.0], [2.0]]))
        m = tape.const(np.arange(6.0).reshape(2, 3))
        g = tape.backward(ad.sum_(col * m))
        np.testing.assert_allclose(g["c"], [[3.0], [12.0]])

    def test_tanh_second_derivative_identity(self):
        # d/da (1 - tanh^2) = -2 tanh (1 - tanh^2)
        a = np.linspace(-2, 2, 7)
        tape = ad.Tape()
        v = tape.param("a", a)
        s = tape.apply("one_minus_square", ad.tanh(v))
        g = tape.backward(ad.sum_(s))
        h = np.tanh(a)
        np.testing.assert_allclose(g["a"], -2 * h * (1 - h * h), rtol=1e-13)

    def test_replay_reproduces_values(self):
        p = tiny_params((3, 4, 2))
        tape = ad.Tape()
        out = ad.mlp_on_tape(p.on_tape(tape), np.ones((2, 3)))
        vals = tape.replay()
        np.testing.assert_array_equal(vals[out.index], out.value)


class TestInputDerivatives:
    dims = (3, 6, 5, 2)

    def _net(self, p, x):
        return mlp_forward(p, x)

    def test_forward_matches_plain_mlp(self):
        p = tiny_params(self.dims)
        x = np.random.default_rng(1).normal(size=(7, 3))
        tape = ad.Tape()
        out = ad.mlp_on_tape(p.on_tape(tape), x)
        np.testing.assert_allclose(out.value, mlp_forward(p, x), rtol=0, atol=1e-15)

    def test_first_and_second_directional_derivatives(self):
        p = tiny_params(self.dims, seed=3)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 3))
        u = np.array([0.3, -1.0, 0.5])
        tape = ad.Tape()
        dual = ad.forward_with_input_derivatives(p.on_tape(tape), x, u, order=2)
        h = 1e-4
        fp, f0, fm = (mlp_forward(p, x + s * u) for s in (h, 0.0, -h))
        np.testing.assert_allclose(dual.d1.value, (fp - fm) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(dual.d2.value, (fp - 2 * f0 + fm) / h ** 2, atol=1e-6)

    def test_per_row_direction(self):
        p = tiny_params(self.dims)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 3))
        u = rng.normal(size=(3, 3))
        tape = ad.Tape()
        dual = ad.forward_with_input_derivatives(p.on_tape(tape), x, u, order=1)
        h = 1e-5
        fd = (mlp_forward(p, x + h * u) - mlp_forward(p, x - h * u)) / (2 * h)
        np.testing.assert_allclose(dual.d1.value, fd, atol=1e-9)

    def test_parameter_gradient_through_second_derivative(self):
        p = tiny_params(self.dims, seed=5)
        x = np.random.default_rng(6).normal(size=(5, 3))

        def build(layers):
            d = ad.forward_with_input_derivatives(layers, x, [1.0, 0.0, 0.0], order=2)
            return ad.mean_sq_norm(d.d2) + ad.mean_sq_norm(d.d1 * d.value)

        assert gradient_error(p, build) < 1e-6

    def test_order_validation(self):
        p = tiny_params(self.dims)
        tape = ad.Tape()
        with pytest.raises(ValueError):
            ad.forward_with_input_derivatives(p.on_tape(tape), np.zeros((1, 3)), [1, 0, 0], order=3)
        with pytest.raises(ValueError):
            ad.forward_with_input_derivatives(p.on_tape(tape), np.zeros((1, 3)), [1, 0], order=1)
        with pytest.raises(ValueError):
            ad.mlp_on_tape(p.on_tape(tape), np.zeros((1, 4)))

    def test_single_linear_layer_has_zero_curvature(self):
        p = tiny_params((2, 3))
        tape = ad.Tape()
        d = ad.forward_with_input_derivatives(p.on_tape(tape), np.ones((2, 2)), [1.0, 1.0], order=2)
        np.testing.assert_array_equal(d.d2.value, np.zeros((2, 3)))


class TestGradientProperties:
    @settings(max_examples=20, deadline=None)
    @given(width=st.integers(1, 8), depth=st.integers(1, 3), batch=st.integers(1, 6), seed=st.integers(0, 10_000))
    def test_random_nets_match_finite_differences(self, width, depth, batch, seed):
        dims = (2,) + (width,) * depth + (2,)
        p = tiny_params(dims, seed=seed)
        x = np.random.default_rng(seed).normal(size=(batch, 2))

        def build(layers):
            out = ad.mlp_on_tape(layers, x)
            return ad.mean(ad.tanh(out) * out)

        assert gradient_error(p, build) < 1e-5
