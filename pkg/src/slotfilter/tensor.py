"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record onto the :class:`Graph` that is active in the current thread
(``with Graph() as g: ...``) whenever at least one input requires a gradient.
Outside a graph nothing is recorded, which is the inference path.

    >>> p = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Graph() as g:
    ...     loss = sum_(p * p)
    >>> backward(g, loss, [p])[0]
    array([2., 4.])
"""
import threading
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DimensionError, NonFiniteError, UsageError

L2_EPS = 1e-12
LN_EPS = 1e-5
LOG_FLOOR = 1e-12

_local = threading.local()


def current_graph():
    return getattr(_local, "graph", None)


class Tensor:
    """Immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        self._init(arr, requires_grad, name)

    def _init(self, arr, requires_grad, name):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        t = cls.__new__(cls)
        t._init(np.asarray(arr, dtype=np.float64), requires_grad, None)
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Recording of operations in execution order (one owner, one thread)."""

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = current_graph()
        _local.graph = self
        return self

    def __exit__(self, *exc):
        _local.graph = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, params=None):
        return backward(self, loss, params)


def _result(data, inputs, bwd):
    g = current_graph()
    out = Tensor._wrap(data)
    if g is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        g.nodes.append(_Node(out, inputs, bwd))
    return out


def backward(graph, loss, params=None):
    """Gradients of scalar ``loss`` w.r.t. ``params`` (zeros when unreached).

    Each parameter's ``.grad`` is set as a side effect. Returns the list of
    gradient arrays in the order of ``params``.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        gout = grads.pop(id(node.out), None)
        if gout is None:
            continue
        for t, gi in zip(node.inputs, node.backward(gout)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = []
    for p in params or ():
        gp = grads.get(id(p))
        gp = np.zeros_like(p.data) if gp is None else np.asarray(gp).reshape(p.shape)
        p.grad = gp
        out.append(gp)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = a.data / b.data  # a zero divisor surfaces as NonFiniteError below

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * y / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(y, (a, b), bwd)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x, floor=LOG_FLOOR):
    """Natural log with the argument clamped below at ``floor``."""
    x = as_tensor(x)
    live = x.data > floor
    y = np.log(np.where(live, x.data, floor))
    return _result(y, (x,), lambda g: (np.where(live, g / np.where(live, x.data, 1.0), 0.0),))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    live = x.data > 0
    return _result(np.where(live, x.data, 0.0), (x,), lambda g: (np.where(live, g, 0.0),))


# --------------------------------------------------------------------------
# shape and reduction


def matmul(a, b):
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), bwd)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(y, (x,), bwd)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape):
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index):
    x = as_tensor(x)

    basic = all(isinstance(i, (slice, int)) for i in (index if isinstance(index, tuple) else (index,)))

    def bwd(g):
        out = np.zeros_like(x.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), bwd)


# --------------------------------------------------------------------------
# kernel-backed ops


def _rows(arr, axis):
    moved = np.moveaxis(arr, axis, -1)
    return np.ascontiguousarray(moved).reshape(-1, arr.shape[axis]), moved.shape


def _unrows(rows, moved_shape, axis):
    return np.moveaxis(rows.reshape(moved_shape), -1, axis)


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    x = as_tensor(x)
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    rows, moved = _rows(x.data, axis)
    yr = kernels.softmax_fwd(rows)

    def bwd(g):
        gr, _ = _rows(g, axis)
        return (_unrows(kernels.softmax_bwd(yr, gr), moved, axis),)

    return _result(_unrows(yr, moved, axis), (x,), bwd)


def l2_normalize(x, axis=-1, eps=L2_EPS):
    """Divide each slice along ``axis`` by ``max(||slice||_2, eps)``."""
    x = as_tensor(x)
    rows, moved = _rows(x.data, axis)
    yr, norm = kernels.l2n_fwd(rows, eps)

    def bwd(g):
        gr, _ = _rows(g, axis)
        return (_unrows(kernels.l2n_bwd(yr, norm, gr, eps), moved, axis),)

    return _result(_unrows(yr, moved, axis), (x,), bwd)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Standardize the last axis, then scale by ``gain`` and shift by ``bias``.

    The variance is floored at ``eps`` rather than offset by it, so slices with
    variance above ``eps`` come out with unit variance exactly.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},)")
    rows = np.ascontiguousarray(x.data).reshape(-1, d)
    xhat, rstd = kernels.ln_fwd(rows, eps)

    def bwd(g):
        gr = g.reshape(-1, d)
        gx = kernels.ln_bwd(xhat, rstd, gr * gain.data, eps).reshape(x.shape) if x.requires_grad else None
        gg = (gr * xhat).sum(axis=0) if gain.requires_grad else None
        gbias = gr.sum(axis=0) if bias.requires_grad else None
        return gx, gg, gbias

    y = (xhat * gain.data + bias.data).reshape(x.shape)
    return _result(y, (x, gain, bias), bwd)


class GRUWeights(NamedTuple):
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor


def gru_cell(x, h, p):
    """Gated recurrent update of hidden rows ``h`` (N x D) from inputs ``x``."""
    x, h = as_tensor(x), as_tensor(h)
    if x.shape != h.shape[:-1] + (p.wz.shape[0],) or h.shape[-1] != p.uz.shape[0]:
        raise DimensionError(f"gru_cell shapes disagree: x {x.shape}, h {h.shape}")
    z = sigmoid(x @ p.wz + h @ p.uz + p.bz)
    r = sigmoid(x @ p.wr + h @ p.ur + p.br)
    cand = tanh(x @ p.wh + (r * h) @ p.uh + p.bh)
    return h + z * (cand - h)


# --------------------------------------------------------------------------
# gradient oracle


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if h <= 0:
        raise UsageError("finite-difference step must be positive")
    # C order so that ``flat`` is a view and the perturbations reach ``x``
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, order="C")
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = float(f(x))
        flat[i] = keep - h
        fm = float(f(x))
        flat[i] = keep
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor=1e-8):
    """Norm-wise relative error ``|a-n| / max(|a|+|n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))
