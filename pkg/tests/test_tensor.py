import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slotfilter import tensor as T
from slotfilter.errors import DimensionError, NonFiniteError, UsageError
from slotfilter.tensor import Graph, Tensor, backward, finite_diff_grad, relative_error


def grad_of(fn, *arrays):
    params = [Tensor(a, requires_grad=True) for a in arrays]
    with Graph() as g:
        loss = fn(*params)
    return backward(g, loss, params), loss


def numeric(fn, arrays, i):
    def f(x):
        args = list(arrays)
        args[i] = x
        return fn(*[Tensor(a) for a in args]).item()
    return finite_diff_grad(f, arrays[i])


def close(analytic, num):
    # relative error, except where both sides are at roundoff level and the
    # 1e-8 denominator floor would amplify 1e-14 noise
    return relative_error(analytic, num) < 1e-6 or np.max(np.abs(analytic - num)) < 1e-12


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(np.eye(2), x).data
    assert np.array_equal(out, x)


def test_matmul_hand():
    assert T.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_zero_annihilates(nprng):
    b = nprng.standard_normal((2, 5))
    assert np.array_equal(T.matmul(np.zeros((2, 2)), b).data, np.zeros((2, 5)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(arrays(np.float64, (4, 4), elements=st.floats(-1e3, 1e3)))
def test_matmul_identity_bitwise(x):
    assert np.array_equal(T.matmul(np.eye(4), x).data, x)


# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    assert np.allclose(T.softmax([1.0, 1.0, 1.0]).data, 1 / 3, atol=1e-15)
    assert np.allclose(T.softmax([0.0, math.log(2.0)]).data, [1 / 3, 2 / 3], atol=1e-15)
    assert np.allclose(T.softmax([1000.0, 1000.0]).data, [0.5, 0.5], atol=0)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-1e4, 1e4)), st.sampled_from([0, 1, -1]))
def test_softmax_sums_to_one(x, axis):
    y = T.softmax(x, axis=axis).data
    assert np.all(np.abs(y.sum(axis=axis) - 1.0) < 1e-12)
    assert np.all((y >= 0) & (y <= 1))


# ---------------------------------------------------------------- l2 / layer norm

def test_l2_normalize_examples():
    assert np.allclose(T.l2_normalize([3.0, 4.0]).data, [0.6, 0.8], atol=1e-15)
    assert T.l2_normalize([1.0, 0.0]).data.tolist() == [1.0, 0.0]
    assert T.l2_normalize([0.0, 0.0]).data.tolist() == [0.0, 0.0]


def test_l2_normalize_zero_slice_gradient_is_finite():
    grads, _ = grad_of(lambda x: T.sum_(T.l2_normalize(x)), np.zeros(3))
    assert np.all(np.isfinite(grads[0]))


def test_layer_norm_examples():
    one, zero = np.ones(2), np.zeros(2)
    assert T.layer_norm([1.0, 1.0], one, zero).data.tolist() == [0.0, 0.0]
    assert np.allclose(T.layer_norm([0.0, 2.0], one, zero).data, [-1.0, 1.0], atol=1e-15)
    assert T.layer_norm([3.0, -1.0], zero, [5.0, 5.0]).data.tolist() == [5.0, 5.0]


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 9)),
              elements=st.floats(-100, 100)))
def test_layer_norm_standardizes(x):
    x = x + np.arange(x.shape[1]) * 1e-2  # rule out constant rows
    y = T.layer_norm(x, np.ones(x.shape[1]), np.zeros(x.shape[1])).data
    assert np.all(np.abs(y.mean(axis=-1)) < 1e-10)
    assert np.all(np.abs(y.var(axis=-1) - 1.0) < 1e-8)


# ---------------------------------------------------------------- GRU

def _gru(d, fill=0.0, bz=0.0):
    z = np.full((d, d), fill)
    b = np.zeros(d)
    return T.GRUWeights(wz=z, uz=z, bz=b + bz, wr=z, ur=z, br=b, wh=z, uh=z, bh=b)


def test_gru_zero_params_halves_hidden(nprng):
    h = nprng.standard_normal((3, 4))
    x = nprng.standard_normal((3, 4))
    out = T.gru_cell(x, h, _gru(4)).data
    assert np.allclose(out, 0.5 * h, atol=1e-15)


def test_gru_saturated_update_gate_keeps_hidden(nprng):
    h = nprng.standard_normal((2, 3))
    out = T.gru_cell(h, h, _gru(3, bz=-50.0)).data
    assert np.allclose(out, h, rtol=0, atol=1e-20)


def test_gru_zero_fixed_point():
    out = T.gru_cell(np.zeros((2, 3)), np.zeros((2, 3)), _gru(3))
    assert np.array_equal(out.data, np.zeros((2, 3)))


def test_gru_shape_mismatch():
    with pytest.raises(DimensionError):
        T.gru_cell(np.zeros((2, 3)), np.zeros((2, 4)), _gru(3))


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    (g,), _ = grad_of(T.sum_, np.array([1.0, -2.0, 5.0]))
    assert g.tolist() == [1.0, 1.0, 1.0]


def test_backward_square():
    (g,), _ = grad_of(lambda p: T.sum_(T.mul(p, p)), np.array([1.0, 2.0]))
    assert g.tolist() == [2.0, 4.0]


def test_backward_unreached_param_is_zero():
    p = Tensor(np.ones(3), requires_grad=True)
    q = Tensor(np.ones((2, 2)), requires_grad=True)
    with Graph() as g:
        loss = T.sum_(T.mul(p, 3.0))
    gp, gq = backward(g, loss, [p, q])
    assert gq.shape == (2, 2) and not gq.any()
    assert gp.tolist() == [3.0, 3.0, 3.0]


def test_backward_detached_constant():
    c = Tensor(np.ones(3))
    p = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        loss = T.sum_(T.mul(c, 2.0))
    (gp,) = backward(g, loss, [p])
    assert not gp.any()


def test_backward_non_scalar_loss():
    p = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        y = T.mul(p, 2.0)
    with pytest.raises(UsageError):
        backward(g, y, [p])


def test_gradients_accumulate_over_reuse():
    (g,), _ = grad_of(lambda p: T.sum_(T.add(T.mul(p, 2.0), T.mul(p, p))), np.array([1.0, 3.0]))
    assert g.tolist() == [4.0, 8.0]


def test_no_graph_records_nothing():
    p = Tensor(np.ones(2), requires_grad=True)
    out = T.mul(p, 2.0)
    assert not out.requires_grad


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_nonfinite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_item_requires_scalar():
    with pytest.raises(UsageError):
        Tensor([1.0, 2.0]).item()


# ---------------------------------------------------------------- finite differences

def test_finite_diff_examples(nprng):
    x = nprng.standard_normal(6)
    assert np.allclose(finite_diff_grad(lambda v: float(v.sum()), x), 1.0, atol=1e-9)
    assert np.allclose(finite_diff_grad(lambda v: float(v @ v), np.array([1.0, 2.0])), [2, 4],
                       atol=1e-6)
    assert np.array_equal(finite_diff_grad(lambda v: 3.0, x), np.zeros(6))


def test_finite_diff_on_non_contiguous_input(nprng):
    x = nprng.standard_normal((3, 4)).T
    w = nprng.standard_normal((4, 3))
    assert np.allclose(finite_diff_grad(lambda v: float((v * w).sum()), x), w, atol=1e-9)


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-9])) < 1e-9


UNARY = {
    "exp": lambda x: T.sum_(T.mul(T.exp(x), [0.3 * i for i in range(10)])),
    "log": lambda x: T.sum_(T.log(T.add(T.mul(x, x), 1.0))),
    "sigmoid": lambda x: T.sum_(T.mul(T.sigmoid(x), np.linspace(-1, 1, 10))),
    "tanh": lambda x: T.sum_(T.mul(T.tanh(x), np.linspace(1, 2, 10))),
    "relu": lambda x: T.sum_(T.mul(T.relu(x), np.linspace(1, 2, 10))),
    "softmax": lambda x: T.sum_(T.mul(T.softmax(T.reshape(x, (2, 5)), axis=0),
                                      np.arange(10.0).reshape(2, 5))),
    "softmax_last": lambda x: T.sum_(T.mul(T.softmax(T.reshape(x, (2, 5))),
                                           np.arange(10.0).reshape(2, 5) ** 2)),
    "l2_normalize": lambda x: T.sum_(T.mul(T.l2_normalize(T.reshape(x, (5, 2))),
                                           np.arange(10.0).reshape(5, 2))),
    "layer_norm": lambda x: T.sum_(T.mul(T.layer_norm(T.reshape(x, (2, 5)), np.full(5, 1.5),
                                                      np.full(5, 0.2)),
                                         np.arange(10.0).reshape(2, 5) ** 1.5)),
    "mean": lambda x: T.mean(T.mul(x, x)),
    "transpose": lambda x: T.sum_(T.mul(T.transpose(T.reshape(x, (2, 5)), (1, 0)),
                                        np.arange(10.0).reshape(5, 2))),
    "getitem": lambda x: T.sum_(T.mul(T.getitem(x, slice(2, 7)), np.arange(5.0))),
    "sum_axis": lambda x: T.sum_(T.mul(T.sum_(T.reshape(x, (2, 5)), axis=0, keepdims=True),
                                       np.arange(5.0))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=arrays(np.float64, 10, elements=st.floats(-2, 2)))
def test_unary_ops_match_finite_differences(name, x):
    fn = UNARY[name]
    if name == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # kink
    if name == "log":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # gradient ~2x there, below FD roundoff
    if name == "l2_normalize":
        x = x + np.where(x >= 0, 0.1, -0.1)  # the norm is not differentiable at 0
    (g,), _ = grad_of(fn, x)
    assert close(g, numeric(fn, [x], 0))


BINARY = {
    "add": lambda a, b: T.sum_(T.mul(T.add(a, b), np.arange(10.0))),
    "sub": lambda a, b: T.sum_(T.mul(T.sub(a, b), np.arange(10.0))),
    "mul": lambda a, b: T.sum_(T.mul(a, b)),
    "div": lambda a, b: T.sum_(T.div(a, T.add(T.mul(b, b), 1.0))),
    "matmul": lambda a, b: T.sum_(T.mul(T.matmul(T.reshape(a, (2, 5)), T.reshape(b, (5, 2))),
                                        [[1.0, 2.0], [3.0, 4.0]])),
    "matmul_batched": lambda a, b: T.sum_(T.mul(
        T.matmul(T.reshape(a, (2, 1, 5)), T.reshape(b, (2, 5, 1))), [[[1.0]], [[-2.0]]])),
    "broadcast_add": lambda a, b: T.sum_(T.mul(T.add(T.reshape(a, (2, 5)),
                                                     T.getitem(b, slice(0, 5))),
                                               np.arange(10.0).reshape(2, 5))),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@given(a=arrays(np.float64, 10, elements=st.floats(-2, 2)),
       b=arrays(np.float64, 10, elements=st.floats(-2, 2)))
def test_binary_ops_match_finite_differences(name, a, b):
    fn = BINARY[name]
    grads, _ = grad_of(fn, a, b)
    for i in range(2):
        assert close(grads[i], numeric(fn, [a, b], i))


@given(arrays(np.float64, (2, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, (2, 3), elements=st.floats(-2, 2)))
def test_gru_matches_finite_differences(x, h):
    rng = np.random.default_rng(0)
    w = {k: rng.standard_normal((3, 3)) * 0.5 if k[0] in "wu" else rng.standard_normal(3) * 0.1
         for k in T.GRUWeights._fields}
    names = list(T.GRUWeights._fields)

    def fn(x_, h_, *ws):
        p = T.GRUWeights(**dict(zip(names, ws)))
        return T.sum_(T.mul(T.gru_cell(x_, h_, p), [[1.0, -1.0, 0.5], [2.0, 0.1, -0.3]]))

    arrs = [x, h] + [w[k] for k in names]
    grads, _ = grad_of(fn, *arrs)
    for i in range(len(arrs)):
        assert close(grads[i], numeric(fn, arrs, i))
