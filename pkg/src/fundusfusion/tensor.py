"""Reverse-mode autodiff on numpy float64 arrays.

A Tensor wraps an ndarray plus an optional backward closure. Ops build a
graph; Tensor.backward() on a scalar runs a topological sweep and accumulates
gradients into .grad of every tensor that requires grad. Gradients add up
across repeated backward calls until zero_grad().

Everything is float64. Broadcasting follows numpy rules; gradients of
broadcast operands are summed back down to the operand shape.
"""

import numpy as np
from scipy.special import erf as _erf

from . import kernels


class ShapeError(ValueError):
    """Raised when operand geometry cannot satisfy an op's contract."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fn = None

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Same storage, cut out of the graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._grad_fn = None
        return t

    # -- engine ------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        # iterative post-order DFS over the requires_grad subgraph
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        # per-pass gradient flow, added into .grad at each node so repeated
        # backward calls accumulate without double counting
        flow = {id(self): np.ones(self.data.shape, dtype=np.float64)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is not None:
                for parent, pg in zip(node._parents, node._grad_fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    k = id(parent)
                    flow[k] = pg if k not in flow else flow[k] + pg
            node.grad = g if node.grad is None else node.grad + g


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data - b.data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data / b.data, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.data.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    """a ** p for a python scalar exponent."""
    p = float(p)
    out_data = a.data ** p
    return _make(out_data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


# -- matmul ------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out, (a, b), grad_fn)


# -- nonlinearities ------------------------------------------------------------

def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    y = x * phi_cdf
    return _make(y, (a,), lambda g: (
        g * (phi_cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI),))


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    floor = float(floor)
    mask = a.data > floor
    return _make(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), grad_fn)


# -- reductions ----------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a_ % len(shape) for a_ in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (
        _expand_reduced(g, a.data.shape, axis, keepdims),))


def tmean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / out.size
    return _make(out, (a,), lambda g: (
        _expand_reduced(g, a.data.shape, axis, keepdims) / n,))


# -- shape ops --------------------------------------------------------------

def reshape(a, shape):
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes):
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def roll(a, shift, axis):
    def grad_fn(g):
        if isinstance(shift, tuple):
            back = tuple(-s for s in shift)
        else:
            back = -shift
        return (np.roll(g, back, axis=axis),)
    return _make(np.roll(a.data, shift, axis=axis), (a,), grad_fn)


def pad(a, pad_width):
    """Zero padding; pad_width is the np.pad spec, one (before, after) per axis."""
    spec = tuple(tuple(p) for p in pad_width)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(spec, a.data.shape))
    return _make(np.pad(a.data, spec), (a,), lambda g: (g[sl],))


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, grad_fn)


def getitem(a, idx):
    """Basic indexing only (ints, slices, tuples thereof)."""
    def grad_fn(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        return (buf,)
    return _make(a.data[idx], (a,), grad_fn)


def take_rows(a, indices):
    """Advanced row lookup along axis 0 (embedding gather); indices may repeat."""
    idx = np.asarray(indices, dtype=np.intp)

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _make(a.data[idx], (a,), grad_fn)


# -- convolution ----------------------------------------------------------------

def conv2d(x, w, stride=1, padding=0):
    """2-D convolution, x [B,C,H,W], w [O,C,KH,KW], symmetric zero padding.

    padding may be one int for both axes or an (ph, pw) pair.
    """
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d needs 4-D operands, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs weight {w.data.shape}")
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    stride = int(stride)
    if stride < 1 or ph < 0 or pw < 0:
        raise ShapeError(f"conv2d bad stride/padding: {stride}, ({ph}, {pw})")
    kh, kw = w.data.shape[2:]
    hp = x.data.shape[2] + 2 * ph
    wp = x.data.shape[3] + 2 * pw
    if hp < kh or wp < kw:
        raise ShapeError(
            f"conv2d kernel {w.data.shape} exceeds padded input {(hp, wp)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    xp = np.ascontiguousarray(xp)
    wc = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xp, wc, stride)

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gxp = kernels.conv2d_grad_input(g, wc, stride, hp, wp)
        if ph or pw:
            gx = gxp[:, :, ph : hp - ph, pw : wp - pw]
        else:
            gx = gxp
        gw = kernels.conv2d_grad_weight(g, xp, stride, kh, kw)
        return gx, gw

    return _make(out, (x, w), grad_fn)


# -- composite layers ------------------------------------------------------------

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gamma), beta)


def affine(x, w, b):
    """x @ w + b."""
    return add(matmul(x, w), b)


# -- operator sugar ---------------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__getitem__ = lambda self, idx: getitem(self, idx)

Tensor.exp = exp
Tensor.log = log
Tensor.tanh = tanh
Tensor.sigmoid = sigmoid
Tensor.gelu = gelu
Tensor.softmax = softmax
Tensor.clip_min = clip_min
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes: transpose(self, axes)
Tensor.roll = roll
Tensor.pad = pad
Tensor.take_rows = take_rows
