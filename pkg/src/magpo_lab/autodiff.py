"""A small tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes an
upstream gradient back to them.  ``backward`` walks the graph in reverse
topological order.  Only what the policy losses need is supported: affine
maps, pointwise nonlinearities, log-softmax, reductions, gathers, clipping,
elementwise min/max and stop-gradient.

Clipping and min/max route gradient only through the active branch, so a
clipped region has exactly zero gradient.  Boolean masks enter as plain
arrays and are never differentiated.
"""

from __future__ import annotations

import itertools
import numpy as np

from . import _kernels

_ids = itertools.count()


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "id")

    def __init__(self, value, parents=(), backward_fn=None, op="const"):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.id = next(_ids)

    @property
    def requires_grad(self):
        return self.backward_fn is not None or self.op == "leaf"

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def leaf(value):
    """A differentiable input."""
    t = Tensor(np.asarray(value, dtype=np.float64), op="leaf")
    return t


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def stop_gradient(x):
    return Tensor(as_tensor(x).value)


def _make(value, parents, backward_fn, op):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite output from op '{op}' "
                                 f"(inputs: {[p.op for p in parents]})")
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(value, op=op)
    return Tensor(value, parents, backward_fn, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.value / b.value**2, b.shape))

    return _make(a.value / b.value, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: _accum(a, -g), "neg")


def square(a):
    a = as_tensor(a)
    return _make(a.value**2, (a,), lambda g: _accum(a, 2.0 * a.value * g), "square")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            av = a.value.reshape(-1, a.shape[-1])
            _accum(b, av.T @ g.reshape(-1, g.shape[-1]))

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: _accum(a, g * out), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: _accum(a, g / a.value), "log")


def relu(a):
    a = as_tensor(a)
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), (a,), lambda g: _accum(a, g * pos), "relu")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: _accum(a, g * (1.0 - out**2)), "tanh")


def gelu(a):
    """tanh-approximated GELU."""
    a = as_tensor(a)
    out, deriv = _kernels.gelu(a.value)
    return _make(out, (a,), lambda g: _accum(a, g * deriv), "gelu")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        p = np.exp(out)
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw, "log_softmax")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def take(a, idx, axis=-1):
    """``take_along_axis`` with ``idx`` lacking the gathered axis."""
    a = as_tensor(a)
    idx = np.expand_dims(np.asarray(idx), axis)
    out = np.take_along_axis(a.value, idx, axis=axis)

    def bw(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _accum(a, full)

    return _make(np.squeeze(out, axis), (a,), bw, "take")


def clip(a, lo, hi):
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    out = np.clip(a.value, lo, hi)
    return _make(out, (a,), lambda g: _accum(a, g * inside), "clip")


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value <= b.value

    def bw(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.value, b.value), (a, b), bw, "minimum")


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value >= b.value

    def bw(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.value, b.value), (a, b), bw, "maximum")


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.value)
        full[idx] += g
        _accum(a, full)

    return _make(a.value[idx], (a,), bw, "getitem")


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def split(a, sizes):
    """Cut a flat tensor into consecutive pieces with one backward scatter."""
    a = as_tensor(a)
    bounds = np.cumsum([0] + list(sizes))
    pieces = [a.value[bounds[k]:bounds[k + 1]] for k in range(len(sizes))]
    if not a.requires_grad:
        return [Tensor(p) for p in pieces]
    outs = []
    for k, p in enumerate(pieces):
        lo, hi = bounds[k], bounds[k + 1]

        def bw(g, lo=lo, hi=hi):
            full = np.zeros_like(a.value)
            full[lo:hi] = g
            _accum(a, full)

        outs.append(Tensor(p, (a,), bw, "split"))
    return outs


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(root):
    if root.value.size != 1:
        raise ValueError("backward needs a scalar output")
    root.grad = np.ones_like(root.value)
    for node in reversed(_topo(root)):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            if node is not root:
                node.grad = None


def value_and_grad(fn, at):
    """Evaluate scalar ``fn`` at flat array ``at`` and its gradient."""
    x = leaf(at)
    out = fn(x)
    if not isinstance(out, Tensor) or not out.requires_grad:
        return float(np.asarray(as_tensor(out).value)), np.zeros_like(x.value)
    out.backward()
    g = x.grad if x.grad is not None else np.zeros_like(x.value)
    return float(out.value), g


def grad(fn, at):
    return value_and_grad(fn, at)[1]
