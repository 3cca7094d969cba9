"""Tensor engine: op semantics, tape behavior, and gradient checks."""

import numpy as np
import pytest

import tyrppg.autodiff as A
from tyrppg import autodiff as ad
from tyrppg.autodiff import Tensor, backward, grad_check
from tyrppg.errors import NoTapeError, ShapeMismatch, TapeConsumedError, NonFiniteError

from reference_impl import conv3d_reference


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestForwardOps:
    def test_layer_norm_two_points(self):
        out = ad.layer_norm(Tensor([2.0, 4.0]), eps=1e-5).data
        expected = 1.0 / np.sqrt(1.0 + 1e-5)  # variance 1, eps correction
        np.testing.assert_allclose(out, [-expected, expected], rtol=0, atol=1e-15)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_conv3d_all_ones(self):
        out = ad.conv3d(Tensor(np.ones((3, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3)))).data
        assert out[1, 0, 1, 1] == 27.0  # full receptive field
        assert out[0, 0, 0, 0] == 8.0   # corner sees a 2x2x2 neighborhood

    def test_conv3d_matches_direct_summation(self, rng):
        x = rng.standard_normal((3, 2, 4, 3))
        k = rng.standard_normal((2, 2, 3, 3, 3))
        got = ad.conv3d(Tensor(x), Tensor(k)).data
        np.testing.assert_array_equal(got, conv3d_reference(x, k))

    def test_conv3d_paths_agree(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 5, 5)))
        k = Tensor(rng.standard_normal((4, 3, 3, 3, 3)))
        small = ad.conv3d(x, k).data
        limit = A._SEQ_KERNEL_FLOP_LIMIT
        try:
            A._SEQ_KERNEL_FLOP_LIMIT = 0
            big = ad.conv3d(x, k).data
        finally:
            A._SEQ_KERNEL_FLOP_LIMIT = limit
        np.testing.assert_allclose(small, big, rtol=1e-13, atol=1e-13)

    def test_conv3d_one_hot_kernel_is_shift(self, rng):
        x = rng.standard_normal((4, 1, 4, 4))
        k = np.zeros((1, 1, 3, 3, 3))
        k[0, 0, 0, 1, 1] = 1.0  # pick the t-1 neighbor
        out = ad.conv3d(Tensor(x), Tensor(k)).data
        expected = np.zeros_like(x)
        expected[1:] = x[:-1]
        np.testing.assert_array_equal(out, expected)

    def test_conv3d_validation(self):
        x, k = Tensor(np.ones((2, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3, 3)))
        with pytest.raises(ValueError, match="stride"):
            ad.conv3d(x, k, stride=2)
        with pytest.raises(ValueError, match="pad"):
            ad.conv3d(x, k, pad="valid")
        with pytest.raises(ValueError, match="odd"):
            ad.conv3d(x, Tensor(np.ones((1, 1, 2, 3, 3))))
        with pytest.raises(ShapeMismatch):
            ad.conv3d(x, Tensor(np.ones((1, 2, 3, 3, 3))))

    def test_matmul_paths_agree(self, rng):
        a = Tensor(rng.standard_normal((37, 16)))
        b = Tensor(rng.standard_normal((16, 32)))
        small = ad.matmul(a, b).data
        limit = A._SEQ_KERNEL_FLOP_LIMIT
        try:
            A._SEQ_KERNEL_FLOP_LIMIT = 0
            big = ad.matmul(a, b).data
        finally:
            A._SEQ_KERNEL_FLOP_LIMIT = limit
        np.testing.assert_allclose(small, big, rtol=1e-13, atol=1e-14)

    def test_softmax_slices(self, rng):
        x = Tensor(rng.standard_normal((3, 5)) * 20.0)
        y = ad.softmax(x, axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(y > 0) and np.all(y < 1)

    def test_concat_split_identity(self, rng):
        x = rng.standard_normal((2, 7, 3))
        parts = ad.split(Tensor(x), [2, 4, 1], axis=1)
        back = ad.concat(parts, axis=1).data
        np.testing.assert_array_equal(back, x)

    def test_split_bad_sizes(self):
        with pytest.raises(ValueError, match="sum"):
            ad.split(Tensor(np.ones((4, 2))), [1, 2], axis=0)

    def test_layer_norm_bad_eps(self):
        with pytest.raises(ValueError, match="eps"):
            ad.layer_norm(Tensor([1.0, 2.0]), eps=0.0)

    def test_time_shift(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_array_equal(ad.time_shift(x, 1).data, [[0.0], [1.0], [2.0]])
        np.testing.assert_array_equal(ad.time_shift(x, -1).data, [[2.0], [3.0], [0.0]])


class TestBroadcast:
    def test_suffix_broadcast(self, rng):
        x = rng.standard_normal((3, 4, 5))
        b = rng.standard_normal(5)
        np.testing.assert_array_equal(ad.add(Tensor(x), Tensor(b)).data, x + b)

    def test_scalar_broadcast(self, rng):
        x = rng.standard_normal((2, 3))
        assert np.array_equal(ad.mul(Tensor(x), 2.5).data, x * 2.5)

    def test_rejects_general_broadcast(self):
        with pytest.raises(ShapeMismatch) as info:
            ad.add(Tensor(np.ones((2, 1, 3))), Tensor(np.ones((2, 4, 3))))
        assert info.value.op == "add"
        assert info.value.lhs == (2, 1, 3) and info.value.rhs == (2, 4, 3)

    def test_rejects_prefix_broadcast(self):
        with pytest.raises(ShapeMismatch):
            ad.mul(Tensor(np.ones((4, 3))), Tensor(np.ones(4)))

    def test_suffix_gradient_reduces(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=False)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        backward(ad.sum(ad.mul(x, b)))
        np.testing.assert_allclose(b.grad, x.data.sum(axis=0), atol=1e-15)


class TestBackward:
    def test_square_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ad.sum(ad.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_constant_leaf_has_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        backward(ad.sum(ad.mul(x, c)))
        assert c.grad is None and x.grad is not None

    def test_grad_shapes_everywhere(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        mid = ad.tanh(x)
        backward(ad.sum(mid))
        assert mid.grad.shape == mid.shape and x.grad.shape == x.shape

    def test_backward_twice_errors(self):
        x = Tensor([1.0], requires_grad=True)
        loss = ad.sum(x)
        backward(loss)
        with pytest.raises(TapeConsumedError):
            backward(loss)

    def test_detached_loss_errors(self):
        with pytest.raises(NoTapeError):
            backward(ad.sum(Tensor([1.0, 2.0])))

    def test_non_scalar_loss_errors(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(ad.mul(x, x))

    def test_grad_accumulates_across_tapes(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ad.sum(ad.mul(x, x)))
        first = x.grad.copy()
        backward(ad.sum(ad.mul(x, x)))
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_diamond_graph_accumulates_once(self):
        x = Tensor([2.0], requires_grad=True)
        y = ad.mul(x, 3.0)
        loss = ad.sum(ad.add(y, y))
        backward(loss)
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_layer_norm_composite_fd(self, rng):
        x = Tensor(rng.standard_normal((3, 5)) + np.arange(5) * 0.9)
        w = Tensor(rng.standard_normal((3, 5)))

        def f(t):
            return ad.sum(ad.mul(ad.layer_norm(t, eps=1e-5, axis=1), w))

        assert grad_check(f, x, h=1e-5) < 1e-6


class TestGradCheck:
    def test_sigmoid_sum(self, rng):
        err = grad_check(lambda t: ad.sum(ad.sigmoid(t)), Tensor(rng.standard_normal(7)))
        assert err < 1e-7

    def test_affine_is_exact(self, rng):
        w = Tensor(rng.standard_normal(6))
        err = grad_check(lambda t: ad.sum(ad.mul(t, w)), Tensor(rng.standard_normal(6)))
        assert err < 1e-9  # central differences are exact on affine maps

    def test_pearson(self, rng):
        from tyrppg.losses import pearson_loss

        gt = Tensor(rng.standard_normal(24))
        err = grad_check(lambda t: pearson_loss(t, gt), Tensor(rng.standard_normal(24)))
        assert err < 1e-6

    def test_nonfinite_names_coordinate(self):
        def f(t):
            return ad.sum(ad.log(t))  # log of a negative perturbation

        x = Tensor(np.array([1.0, 1e-6]))
        with pytest.raises(NonFiniteError, match="coordinate"):
            grad_check(f, x, h=1e-5)
