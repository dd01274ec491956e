"""Gradient checks for every engine op against central finite differences."""

import numpy as np
import pytest
from conftest import check_gradients

from hycoreg import autodiff as ad
from hycoreg.autodiff import Tensor
from hycoreg.errors import ShapeError

RNG = np.random.default_rng(12345)


def leaf(shape, low=0.2, high=1.5):
    # values away from 0 keep relu/log/sqrt finite-difference friendly
    return Tensor(RNG.uniform(low, high, size=shape), requires_grad=True)


def test_add_broadcast_grad():
    a, b = leaf((3, 1)), leaf((1, 4))
    check_gradients(lambda: ad.tensor_sum((a + b) * (a + b)), {"a": a, "b": b})


def test_sub_neg_grad():
    a, b = leaf((2, 3)), leaf((2, 3))
    check_gradients(lambda: ad.tensor_sum((a - b) * -(a - b) * 0.5 + a), {"a": a, "b": b})


def test_mul_div_grad():
    a, b = leaf((4,)), leaf((4,))
    check_gradients(lambda: ad.tensor_sum(a * b + a / b), {"a": a, "b": b})


def test_power_sqrt_exp_log_grad():
    a = leaf((5,))
    check_gradients(
        lambda: ad.tensor_sum(a**3 + ad.sqrt(a) + ad.exp(a) + ad.log(a)), {"a": a}
    )


def test_relu_grad():
    a = Tensor(np.array([-1.0, -0.3, 0.4, 2.0]), requires_grad=True)
    check_gradients(lambda: ad.tensor_sum(ad.relu(a) * a), {"a": a})


def test_matmul_grad():
    a, b = leaf((3, 4)), leaf((4, 2))
    check_gradients(lambda: ad.tensor_sum(ad.matmul(a, b) ** 2), {"a": a, "b": b})


def test_batched_matmul_grad():
    a, b = leaf((2, 3, 4)), leaf((4, 2))
    c = leaf((2, 2, 3))
    check_gradients(
        lambda: ad.tensor_sum(ad.matmul(c, ad.matmul(a, b))), {"a": a, "b": b, "c": c}
    )


def test_matmul_requires_2d():
    with pytest.raises(ShapeError):
        ad.matmul(leaf((3,)), leaf((3, 2)))


def test_sum_axis_keepdims_grad():
    a = leaf((3, 4))
    check_gradients(
        lambda: ad.tensor_sum(ad.tensor_sum(a, axis=1, keepdims=True) * a), {"a": a}
    )


def test_mean_grad():
    a = leaf((3, 4))
    check_gradients(lambda: ad.tensor_mean(a * a), {"a": a})


def test_reshape_transpose_grad():
    a = leaf((2, 3, 4))
    check_gradients(
        lambda: ad.tensor_sum(ad.transpose(ad.reshape(a, (6, 4)), (1, 0)) ** 2), {"a": a}
    )


def test_getitem_grad():
    a = leaf((5, 3))
    check_gradients(lambda: ad.tensor_sum(ad.getitem(a, (slice(1, 4), 2)) ** 2), {"a": a})


def test_concat_grad():
    a, b = leaf((2, 3)), leaf((4, 3))
    check_gradients(lambda: ad.tensor_sum(ad.concat([a, b], axis=0) ** 2), {"a": a, "b": b})


def test_softmax_grad_and_rows():
    a = leaf((3, 5), low=-1.0, high=1.0)
    out = ad.softmax(a, axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    check_gradients(lambda: ad.tensor_sum(ad.softmax(a, axis=-1) ** 2), {"a": a})


def test_conv3d_grad():
    x = leaf((2, 2, 5, 4, 4))
    k = leaf((3, 2, 3, 2, 2), low=-0.8, high=0.8)
    b = leaf((3,), low=-0.5, high=0.5)
    check_gradients(
        lambda: ad.tensor_sum(ad.conv3d(x, k, b) ** 2), {"x": x, "k": k, "b": b}
    )


def test_conv3d_shape_checks():
    with pytest.raises(ShapeError):
        ad.conv3d(leaf((1, 2, 4, 4, 4)), leaf((1, 3, 2, 2, 2)))
    with pytest.raises(ShapeError):
        ad.conv3d(leaf((1, 1, 2, 2, 2)), leaf((1, 1, 3, 1, 1)))


def test_maxpool_grad_and_membership():
    x = leaf((2, 2, 4, 4, 4))
    out = ad.maxpool3d(x, (2, 2, 2))
    # every pooled value is one of its window inputs
    for idx in np.ndindex(out.data.shape):
        b, c, d, h, w = idx
        window = x.data[b, c, 2 * d : 2 * d + 2, 2 * h : 2 * h + 2, 2 * w : 2 * w + 2]
        assert out.data[idx] in window
    check_gradients(lambda: ad.tensor_sum(ad.maxpool3d(x, (2, 2, 2)) ** 2), {"x": x})


def test_maxpool_remainder_dropped():
    x = Tensor(np.arange(2 * 1 * 5 * 3 * 3, dtype=np.float64).reshape(2, 1, 5, 3, 3))
    out = ad.maxpool3d(x, (2, 3, 3))
    assert out.data.shape == (2, 1, 2, 1, 1)


def test_backward_requires_scalar():
    a = leaf((3,))
    with pytest.raises(ShapeError):
        (a * a).backward()


def test_grad_accumulates_across_backwards():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.tensor_sum(a * a)
    loss.backward()
    first = a.grad.copy()
    ad.tensor_sum(a * a).backward()
    assert np.array_equal(a.grad, 2 * first)
    a.zero_grad()
    assert a.grad is None


def test_analytic_square_gradient_exact():
    a = Tensor(np.array([0.5, -1.5, 3.0]), requires_grad=True)
    ad.tensor_sum(a * a).backward()
    assert np.array_equal(a.grad, 2 * a.data)


def test_detach_blocks_gradient():
    a = leaf((3,))
    loss = ad.tensor_sum(a.detach() * a)
    loss.backward()
    assert np.allclose(a.grad, a.data)  # only the non-detached factor contributes


def test_no_grad_builds_no_graph():
    a = leaf((3,))
    with ad.no_grad():
        out = a * a
    assert out._parents == ()
    assert not out.requires_grad


def test_diamond_graph_grad():
    # a feeds two paths that rejoin: gradient sums over paths
    a = leaf((3,))
    check_gradients(lambda: ad.tensor_sum((a * 2.0) * (a + 1.0)), {"a": a})


def test_forward_deterministic():
    a = Tensor(RNG.uniform(size=(4, 4)))
    b = Tensor(RNG.uniform(size=(4, 4)))
    out1 = ad.matmul(a, b).data
    out2 = ad.matmul(a, b).data
    assert np.array_equal(out1, out2)


def test_float32_ops_stay_float32():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = ad.relu(a * 2.0 + 1.0)
    assert out.data.dtype == np.float32
    ad.tensor_sum(out).backward()
    assert a.grad.dtype == np.float32
