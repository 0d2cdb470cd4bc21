"""Kernel-level checks: hand examples, finite-difference oracles, determinism."""

import numpy as np
import pytest

from spikeprune import ops
from spikeprune.errors import DimensionError


def central_diff(f, x, h=1e-5):
    """Elementwise central finite differences of a scalar-valued f."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestMatmul:
    def test_identity(self):
        a = np.eye(2)
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ops.matmul(a, b), b)

    def test_projector(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(ops.matmul(a, b), [[5.0, 6.0], [0.0, 0.0]])

    def test_hand_product(self):
        # [[1,2],[3,4]] x [[5,6],[7,8]]: row-by-column expansion by hand.
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(ops.matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(3)
        a, b, c = (rng.uniform(-1, 1, (4, 4)) for _ in range(3))
        lhs = ops.matmul(a, ops.matmul(b, c))
        rhs = ops.matmul(ops.matmul(a, b), c)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_grad_identity_case(self):
        ga, gb = ops.matmul_grad(np.eye(3), np.eye(3), np.eye(3))
        np.testing.assert_array_equal(gb, np.eye(3))

    def test_zero_upstream(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        ga, gb = ops.matmul_grad(np.zeros((3, 2)), a, b)
        assert not ga.any() and not gb.any()


class TestConv2d:
    def test_scaling(self):
        x = np.ones((1, 1, 3, 3))
        w = np.full((1, 1, 1, 1), 2.0)
        np.testing.assert_array_equal(ops.conv2d(x, w), np.full((1, 1, 3, 3), 2.0))

    def test_window_sum(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        w = np.ones((1, 1, 2, 2))
        np.testing.assert_array_equal(ops.conv2d(x, w), [[[[10.0]]]])

    def test_zero_weight(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 5))
        out = ops.conv2d(x, np.zeros((4, 3, 3, 3)), padding=1)
        assert not out.any()

    def test_one_by_one_kernel_is_scaling(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 1, 4, 4))
        w = np.full((1, 1, 1, 1), -1.7)
        np.testing.assert_allclose(ops.conv2d(x, w), -1.7 * x, rtol=0, atol=0)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            ops.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 4, 4)))

    def test_grad_of_window_sum(self):
        # Linearity of correlation: with upstream [[1]], dW equals the input.
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        w = np.ones((1, 1, 2, 2))
        gx, gw = ops.conv2d_grad(np.ones((1, 1, 1, 1)), x, w)
        np.testing.assert_array_equal(gw, x.reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(gx, w)

    def test_zero_upstream(self):
        x = np.ones((1, 2, 4, 4))
        w = np.ones((3, 2, 3, 3))
        gx, gw = ops.conv2d_grad(np.zeros((1, 3, 2, 2)), x, w)
        assert not gx.any() and not gw.any()


class TestAvgPool:
    def test_constant(self):
        x = np.full((1, 2, 4, 4), 3.3)
        np.testing.assert_array_equal(ops.avgpool2d(x, 2), np.full((1, 2, 2, 2), 3.3))

    def test_mean(self):
        x = np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(ops.avgpool2d(x, 2), [[[[4.0]]]])

    def test_zero(self):
        assert not ops.avgpool2d(np.zeros((1, 1, 4, 4)), 2).any()

    def test_zero_window(self):
        with pytest.raises(DimensionError):
            ops.avgpool2d(np.ones((1, 1, 4, 4)), 0)

    def test_grad_uniform_distribution(self):
        gy = np.ones((1, 1, 1, 1))
        gx = ops.avgpool2d_grad(gy, (1, 1, 2, 2), 2)
        np.testing.assert_array_equal(gx, np.full((1, 1, 2, 2), 0.25))


class TestFiniteDifferences:
    """Every backward kernel matches central differences (rel err <= 1e-6, step 1e-5)."""

    def test_matmul_grads(self):
        rng = np.random.default_rng(10)
        a = rng.uniform(-1, 1, (3, 4))
        b = rng.uniform(-1, 1, (4, 5))
        gy = rng.uniform(-1, 1, (3, 5))
        ga, gb = ops.matmul_grad(gy, a, b)
        fa = central_diff(lambda: float((ops.matmul(a, b) * gy).sum()), a)
        fb = central_diff(lambda: float((ops.matmul(a, b) * gy).sum()), b)
        assert rel_err(ga, fa) <= 1e-6
        assert rel_err(gb, fb) <= 1e-6

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_conv_grads(self, stride, padding):
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, (2, 2, 4, 4))
        w = rng.uniform(-1, 1, (3, 2, 2, 2))
        out = ops.conv2d(x, w, stride, padding)
        gy = rng.uniform(-1, 1, out.shape)

        def loss():
            return float((ops.conv2d(x, w, stride, padding) * gy).sum())

        gx, gw = ops.conv2d_grad(gy, x, w, stride, padding)
        assert rel_err(gx, central_diff(loss, x)) <= 1e-6
        assert rel_err(gw, central_diff(loss, w)) <= 1e-6

    @pytest.mark.parametrize("window,stride", [(2, 2), (2, 1)])
    def test_avgpool_grads(self, window, stride):
        rng = np.random.default_rng(12)
        x = rng.uniform(-1, 1, (2, 2, 4, 4))
        out = ops.avgpool2d(x, window, stride)
        gy = rng.uniform(-1, 1, out.shape)

        def loss():
            return float((ops.avgpool2d(x, window, stride) * gy).sum())

        gx = ops.avgpool2d_grad(gy, x.shape, window, stride)
        assert rel_err(gx, central_diff(loss, x)) <= 1e-6


class TestDeterminism:
    def test_repeated_calls_bit_identical(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(3, 4, 9, 9))
        w = rng.normal(size=(5, 4, 3, 3))
        first = ops.conv2d(x, w, stride=2, padding=1)
        for _ in range(3):
            again = ops.conv2d(x, w, stride=2, padding=1)
            assert np.array_equal(first, again)

    def test_results_finite(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        assert np.isfinite(ops.conv2d(x, w, padding=1)).all()
        assert np.isfinite(ops.avgpool2d(x, 2)).all()
