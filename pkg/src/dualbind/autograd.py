"""A small tape-based reverse-mode autodiff over numpy arrays.

Only the operations the networks in this package need are provided. Every
op records a closure that maps the output gradient to parent gradients;
:meth:`Tensor.backward` replays them in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

_DTYPE = [np.float64]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=_DTYPE[-1])
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            if node._parents:
                node.grad = None if node is not self else node.grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.data + b.data,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def reshape(a, shape):
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return Tensor(
        np.transpose(a.data, axes), _parents=(a,), _backward=lambda g: (np.transpose(g, inv),)
    )


def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def silu(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # overflow-free logistic
    out = a.data * s
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * (s + out * (1.0 - s)),))


def relu(a):
    mask = a.data > 0
    return Tensor(a.data * mask, _parents=(a,), _backward=lambda g: (g * mask,))


def sigmoid(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # overflow-free logistic
    return Tensor(s, _parents=(a,), _backward=lambda g: (g * s * (1.0 - s),))


def softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor(s, _parents=(a,), _backward=backward)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply per-feature gain and bias."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        gx = gb = gbias = None
        if gain.requires_grad:
            gb = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        if a.requires_grad:
            gh = g * gain.data
            gx = inv / n * (
                n * gh - gh.sum(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True)
            )
        return gx, gb, gbias

    return Tensor(xhat * gain.data + bias.data, _parents=(a, gain, bias), _backward=backward)


def group_norm(a, groups, gain, bias, eps=1e-5):
    """Group normalization for NCHW input; gain and bias have shape (C,)."""
    b, c, h, w = a.shape
    x = a.data.reshape(b, groups, -1)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, c, h, w)
    n = x.shape[-1]

    def backward(g):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if a.requires_grad:
            gh = (g * gain.data[None, :, None, None]).reshape(b, groups, -1)
            xh = xhat.reshape(b, groups, -1)
            gx = inv / n * (
                n * gh - gh.sum(axis=-1, keepdims=True) - xh * (gh * xh).sum(axis=-1, keepdims=True)
            )
            gx = gx.reshape(b, c, h, w)
        return gx, gg, gb

    out = xhat * gain.data[None, :, None, None] + bias.data[None, :, None, None]
    return Tensor(out, _parents=(a, gain, bias), _backward=backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=backward,
    )


def take_rows(table, ids):
    """Gather ``table[ids]`` (embedding lookup) with a scatter-add backward."""
    ids = np.asarray(ids)

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (out,)

    return Tensor(table.data[ids], _parents=(table,), _backward=backward)


def _im2col(x, k, stride, pad):
    """Channel-last patch matrix: rows are output pixels, columns (ki, kj, c)."""
    b, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + w, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return cols.reshape(b * ho * wo, k * k * c), ho, wo


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation on NCHW input with OIHW weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    b, c, h, w = x.shape
    o, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(b, ho, wo, k, k, c)
            gpad = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gpad[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
            gx = gpad[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor(out, _parents=parents, _backward=backward)


def upsample2x(x):
    """Nearest-neighbour 2x spatial upsampling for NCHW input."""
    b, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return Tensor(
        out,
        _parents=(x,),
        _backward=lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),),
    )


def mse(pred, target):
    """Element-mean squared error against a constant target array."""
    diff = pred.data - np.asarray(target, dtype=pred.data.dtype)
    n = diff.size
    return Tensor(
        np.mean(diff * diff), _parents=(pred,), _backward=lambda g: (g * 2.0 * diff / n,)
    )
