import math

import numpy as np
import pytest

from ctrlfuse import tensor as T
from ctrlfuse.tensor import ContractError, ShapeError, Tensor, grad_check


def test_mul_values():
    out = Tensor([1.0, 2.0]) * Tensor([3.0, 4.0])
    assert np.array_equal(out.data, [3.0, 8.0])


def test_mul_grad_product_rule():
    a = Tensor([2.0], requires_grad=True)
    b = Tensor([5.0], requires_grad=True)
    (a * b).sum().backward()
    assert np.array_equal(a.grad, [5.0])
    assert np.array_equal(b.grad, [2.0])


def test_maximum_tie_routes_to_first():
    a = Tensor([1.0, 3.0], requires_grad=True)
    b = Tensor([1.0, 3.0], requires_grad=True)
    T.maximum(a, b).sum().backward()
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [0.0, 0.0])


def test_matmul_identity_and_hand_sum():
    b = np.arange(4.0).reshape(2, 2)
    out = Tensor(np.eye(2)) @ Tensor(b)
    assert np.array_equal(out.data, b)
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


def test_matmul_gradcheck_tight():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((5, 4)))
    b = Tensor(rng.standard_normal((4, 3)))
    err = grad_check(lambda x, y: (x @ y).sum(), [a, b])
    assert err < 1e-6


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    (x ** 2).sum().backward()
    assert np.array_equal(x.grad, [6.0])


def test_backward_rejects_nonscalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_fanout_accumulates_both_paths():
    x = Tensor([2.0], requires_grad=True)
    y = x * 3.0 + x * 4.0
    y.sum().backward()
    assert np.array_equal(x.grad, [7.0])


def test_broadcast_grad_sums_out():
    a = Tensor(np.ones((3, 1)), requires_grad=True)
    b = Tensor(np.ones((3, 4)), requires_grad=True)
    (a + b).sum().backward()
    assert np.array_equal(a.grad, np.full((3, 1), 4.0))
    assert np.array_equal(b.grad, np.ones((3, 4)))


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))


def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(1).standard_normal((2, 5, 5)))
    w = np.zeros((2, 2, 1, 1))
    w[0, 0, 0, 0] = 1.0
    w[1, 1, 0, 0] = 1.0
    out = T.conv2d(x, Tensor(w), padding=0)
    assert np.array_equal(out.data, x.data)


def test_conv2d_averaging_kernel_constant_interior():
    x = Tensor(np.full((1, 6, 6), 0.7))
    w = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
    out = T.conv2d(x, w)  # default padding 1
    assert np.allclose(out.data[0, 1:-1, 1:-1], 0.7)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv2d_stride_shape():
    out = T.conv2d(Tensor(np.zeros((1, 8, 8))), Tensor(np.zeros((4, 1, 3, 3))),
                   stride=2)
    assert out.shape == (4, 4, 4)


def test_avg_pool_examples():
    assert T.avg_pool2d(Tensor(np.zeros((1, 4, 4))), (4, 4)).item() == 0.0
    assert T.avg_pool2d(Tensor(np.ones((1, 4, 4))), (4, 4)).item() == 1.0
    out = T.avg_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2)
    assert out.item() == 2.5


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(2)
    q = Tensor(rng.standard_normal((3, 4)))
    k = Tensor(rng.standard_normal((1, 4)))
    v = Tensor(rng.standard_normal((1, 4)))
    out = T.attention(q, k, v)
    assert np.allclose(out.data, np.repeat(v.data, 3, axis=0))


def test_attention_saturated_logits_pick_matching_row():
    rng = np.random.default_rng(3)
    k = Tensor(rng.standard_normal((4, 6)) * 100.0)
    v = Tensor(rng.standard_normal((4, 6)))
    out = T.attention(k, k, v)
    assert np.max(np.abs(out.data - v.data)) < 1e-6


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(4).standard_normal((7, 5)) * 10)
    p = T.softmax_rows(x)
    assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-12)


def test_flatten_view_roundtrip_bit_exact():
    x = Tensor(np.random.default_rng(5).standard_normal((3, 4, 6)))
    back = T.view_spatial(T.flatten_spatial(x), 4, 6)
    assert np.array_equal(back.data, x.data)


def test_up_down_sample_constant_roundtrip():
    x = Tensor(np.full((2, 4, 4), 0.3))
    out = T.upsample_nearest2(T.downsample_avg2(x))
    assert np.array_equal(out.data, x.data)


def test_concat_shape_and_slices():
    a = Tensor(np.random.default_rng(6).standard_normal((2, 4, 4)))
    b = Tensor(np.random.default_rng(7).standard_normal((3, 4, 4)))
    out = T.concat([a, b], axis=0)
    assert out.shape == (5, 4, 4)
    assert np.array_equal(out.data[:2], a.data)
    assert np.array_equal(out.data[2:], b.data)


def test_concat_off_axis_mismatch():
    with pytest.raises(ShapeError):
        T.concat([Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 5)))], axis=0)


def test_gradcheck_identity_sum_near_zero():
    x = Tensor(np.random.default_rng(8).standard_normal(10))
    assert grad_check(lambda t: t.sum(), x) < 1e-10


def test_gradcheck_sigmoid_at_zero():
    x = Tensor(np.zeros(5))
    leaf = Tensor(x.data.copy(), requires_grad=True)
    leaf.sigmoid().sum().backward()
    assert np.allclose(leaf.grad, 0.25, atol=1e-15)
    assert grad_check(lambda t: t.sigmoid().sum(), x) < 1e-8


def test_gradcheck_composite_conv_attention_mean():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((2, 6, 6)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4)

    def f(xx, ww):
        f_map = T.conv2d(xx, ww)
        seq = T.flatten_spatial(f_map)
        return T.attention(seq, seq, seq).mean()

    assert grad_check(f, [x, w]) < 1e-4


def test_check_finite_flag_traps_nan():
    T.CHECK_FINITE = True
    try:
        with pytest.raises(ContractError):
            Tensor([-1.0]).log()
    finally:
        T.CHECK_FINITE = False


def test_getitem_backward_scatter():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    (x[1:3, ::2] ** 2).sum().backward()
    expect = np.zeros((3, 4))
    expect[1:3, ::2] = 2.0 * x.data[1:3, ::2]
    assert np.array_equal(x.grad, expect)


def test_clamp_blocks_gradient_outside():
    x = Tensor([-2.0, 0.0, 2.0], requires_grad=True)
    x.clamp(-1.0, 1.0).sum().backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])
