"""Tensor engine: forward values against hand-computed anchors, backward
values against closed-form gradients, and structural autograd behavior."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fundusfusion import tensor as T
from fundusfusion.tensor import ShapeError, Tensor


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


# -- forward anchors ---------------------------------------------------------

def test_matmul_forward_anchor():
    # [[1,2],[3,4]] @ [[5,6],[7,8]] worked by hand
    out = T.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_backward_anchor():
    a = t([[1.0, 2.0], [3.0, 4.0]])
    b = t([[5.0, 6.0], [7.0, 8.0]])
    T.tsum(T.matmul(a, b)).backward()
    # d(sum AB)/dA = 1 B^T, d/dB = A^T 1
    assert np.array_equal(a.grad, [[11.0, 15.0], [11.0, 15.0]])
    assert np.array_equal(b.grad, [[4.0, 4.0], [6.0, 6.0]])


def test_softmax_forward_anchor():
    # 22 digits from exact arithmetic
    out = T.softmax(t([1.0, 2.0, 3.0]), axis=-1)
    expect = [0.09003057317038045799802,
              0.244728471054797652473,
              0.665240955774821889529]
    # one ulp of slack at the largest element
    assert np.allclose(out.data, expect, rtol=0, atol=2e-16)


def test_gelu_forward_anchor():
    out = T.gelu(t([1.0, -0.5, 2.0, 0.0]))
    expect = [0.8413447460685429485852,
              -0.1542687693629934481811,
              1.954499736103641585599,
              0.0]
    assert np.allclose(out.data, expect, rtol=0, atol=1e-16)


def test_elementwise_forward_anchors():
    x = t([0.0, 1.0])
    assert np.allclose(T.sigmoid(x).data, [0.5, 1 / (1 + np.exp(-1.0))])
    assert np.allclose(T.tanh(x).data, np.tanh([0.0, 1.0]))
    assert np.allclose(T.exp(x).data, [1.0, np.e])
    assert np.allclose(T.log(t([1.0, np.e])).data, [0.0, 1.0])


def test_conv2d_forward_anchor():
    # 2x2/stride-2 all-ones kernel over arange(16): window sums by hand
    x = t(np.arange(16.0).reshape(1, 1, 4, 4))
    w = t(np.ones((1, 1, 2, 2)))
    out = T.conv2d(x, w, stride=2)
    assert np.array_equal(out.data[0, 0], [[10.0, 18.0], [42.0, 50.0]])


def test_layer_norm_constant_rows_are_zero():
    x = t(np.full((3, 5), 7.0))
    g = t(np.ones(5))
    b = t(np.zeros(5))
    out = T.layer_norm(x, g, b)
    assert np.array_equal(out.data, np.zeros((3, 5)))


def test_layer_norm_standardizes(rng):
    x = t(rng.normal(size=(4, 8)))
    out = T.layer_norm(x, t(np.ones(8)), t(np.zeros(8))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    # eps shifts the variance slightly below one
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-4)


# -- broadcasting and reduction gradients --------------------------------------

def test_add_broadcast_gradient_sums():
    a = t(np.zeros((2, 3)))
    b = t(np.zeros(3))
    T.tsum(T.add(a, b)).backward()
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, [2.0, 2.0, 2.0])


def test_mul_scalar_broadcast_gradient():
    a = t([[1.0, 2.0], [3.0, 4.0]])
    s = t(3.0)
    T.tsum(T.mul(a, s)).backward()
    assert np.array_equal(a.grad, np.full((2, 2), 3.0))
    assert s.grad.shape == ()
    assert s.grad == 10.0


def test_mean_gradient_is_uniform():
    x = t(np.arange(6.0).reshape(2, 3))
    T.tmean(x).backward()
    assert np.allclose(x.grad, np.full((2, 3), 1 / 6))


def test_sum_axis_keepdims_gradient():
    x = t(np.arange(6.0).reshape(2, 3))
    out = T.tsum(x, axis=1, keepdims=True)
    assert out.shape == (2, 1)
    T.tsum(T.mul(out, t([[2.0], [3.0]]))).backward()
    assert np.array_equal(x.grad, [[2.0, 2.0, 2.0], [3.0, 3.0, 3.0]])


# -- autograd structure -----------------------------------------------------------

def test_diamond_graph_accumulates_paths():
    x = t(3.0)
    y = T.add(T.mul(x, x), x)   # x^2 + x, dy/dx = 2x + 1
    y.backward()
    assert x.grad == 7.0


def test_backward_accumulates_across_calls():
    x = t([1.0, 2.0])
    T.tsum(x).backward()
    T.tsum(x).backward()
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_zero_grad_and_detach():
    x = t([1.0, 2.0])
    T.tsum(x).backward()
    x.zero_grad()
    assert x.grad is None
    d = x.detach()
    assert not d.requires_grad
    assert np.array_equal(d.data, x.data)


def test_backward_requires_scalar():
    x = t([1.0, 2.0])
    with pytest.raises(ValueError):
        x.backward()


def test_backward_requires_grad_flag():
    x = t(2.0, grad=False)
    with pytest.raises(ValueError):
        T.mul(x, x).backward()


def test_no_gradient_flows_to_frozen_leaf():
    a = t(2.0)
    b = t(3.0, grad=False)
    T.mul(a, b).backward()
    assert a.grad == 3.0
    assert b.grad is None


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as err:
        T.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))
    assert "(2, 3)" in str(err.value)


# -- shape ops ----------------------------------------------------------------------

def test_reshape_transpose_roundtrip(rng):
    x = t(rng.normal(size=(2, 3, 4)))
    y = T.transpose(T.reshape(x, (6, 4)), (1, 0))
    assert y.shape == (4, 6)
    T.tsum(T.mul(y, y)).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_roll_matches_numpy_and_inverts(rng):
    x = t(rng.normal(size=(4, 5)))
    y = T.roll(x, (1, -2), (0, 1))
    assert np.array_equal(y.data, np.roll(x.data, (1, -2), (0, 1)))
    T.tsum(T.mul(y, t(y.data.copy(), grad=False))).backward()
    # gradient rolls back: d sum(y*c)/dx = roll(c, inverse)
    assert np.array_equal(x.grad, np.roll(y.data, (-1, 2), (0, 1)))


def test_pad_and_slice_gradients():
    x = t([[1.0, 2.0], [3.0, 4.0]])
    y = T.pad(x, ((0, 1), (1, 0)))
    assert y.shape == (3, 3)
    assert np.array_equal(y.data, [[0, 1, 2], [0, 3, 4], [0, 0, 0]])
    T.tsum(y[0:1, :]).backward()
    assert np.array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0]])


def test_concat_backward_splits():
    a = t([[1.0], [2.0]])
    b = t([[3.0], [4.0]])
    out = T.concat([a, b], axis=1)
    assert out.shape == (2, 2)
    T.tsum(T.mul(out, t([[1.0, 10.0], [100.0, 1000.0]], grad=False))).backward()
    assert np.array_equal(a.grad, [[1.0], [100.0]])
    assert np.array_equal(b.grad, [[10.0], [1000.0]])


def test_take_rows_accumulates_duplicate_indices():
    emb = t(np.arange(6.0).reshape(3, 2))
    out = T.take_rows(emb, np.array([1, 1, 2]))
    assert np.array_equal(out.data, [[2.0, 3.0], [2.0, 3.0], [4.0, 5.0]])
    T.tsum(out).backward()
    assert np.array_equal(emb.grad, [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])


def test_clip_min_gradient_gate():
    x = t([0.5, 2.0])
    T.tsum(T.clip_min(x, 1.0)).backward()
    assert np.array_equal(x.grad, [0.0, 1.0])


def test_softmax_masked_logits_go_exactly_zero():
    x = t([[0.0, 0.0, -1e9]])
    out = T.softmax(x, axis=-1)
    assert out.data[0, 2] == 0.0
    assert np.allclose(out.data[0, :2], 0.5)


def test_division_and_power_gradients():
    x = t(4.0)
    T.div(t(1.0, grad=False), x).backward()      # d(1/x)/dx = -1/x^2
    assert x.grad == -1 / 16
    y = t(3.0)
    T.power(y, 3).backward()                     # 3 y^2
    assert y.grad == 27.0


# -- properties -----------------------------------------------------------------------

@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1),
       st.integers(0, 10))
def test_sum_matches_numpy(r, c, axis, seed):
    x = np.random.default_rng(seed).normal(size=(r, c))
    axis = axis % x.ndim
    out = T.tsum(Tensor(x), axis=axis)
    assert np.allclose(out.data, x.sum(axis=axis))


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 10))
def test_matmul_matches_numpy(m, k, n, seed):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(m, k)), g.normal(size=(k, n))
    assert np.allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b)


@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 20))
def test_softmax_rows_are_distributions(r, c, seed):
    x = np.random.default_rng(seed).normal(size=(r, c)) * 5
    out = T.softmax(Tensor(x), axis=-1).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=-1), 1.0)


@given(st.integers(0, 25))
def test_operator_sugar_matches_functions(seed):
    g = np.random.default_rng(seed)
    a, b = Tensor(g.normal(size=(3,))), Tensor(g.normal(size=(3,)))
    assert np.array_equal((a + b).data, T.add(a, b).data)
    assert np.array_equal((a * b).data, T.mul(a, b).data)
    assert np.array_equal((a - b).data, T.sub(a, b).data)
    assert np.array_equal((-a).data, T.neg(a).data)
