"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. :func:`backward` walks the graph once in reverse
topological order and accumulates gradients additively, so a node used
twice receives the sum of both contributions.

Broadcasting is limited to python scalars and a trailing row vector added
to (or multiplied with) a larger array, i.e. the bias-add pattern.
"""

from __future__ import annotations

import math

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf", name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast_kind(a, b, op):
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "row"
    if b.size == 1 and b.ndim == 0:
        return "scalar"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, kind, shape):
    if kind == "same":
        return g
    if kind == "row":
        return g.reshape(-1, shape[0]).sum(axis=0)
    return np.asarray(g.sum())


def add(a, b):
    if not isinstance(b, Tensor):
        if not isinstance(a, Tensor):
            raise TypeError("add needs at least one Tensor")
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add")
    a = _as_tensor(a)
    if a.shape != b.shape and a.ndim < b.ndim:
        a, b = b, a
    kind = _broadcast_kind(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, kind, b.shape)), "add")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, neg(b))


def mul(a, b):
    if not isinstance(b, Tensor):
        if not isinstance(a, Tensor):
            raise TypeError("mul needs at least one Tensor")
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul")
    a = _as_tensor(a)
    if a.shape != b.shape and a.ndim < b.ndim:
        a, b = b, a
    kind = _broadcast_kind(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, _reduce_to(g * ad, kind, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def power(a, exponent):
    e = float(exponent)
    x = a.data
    return _make(x ** e, (a,), lambda g: (g * e * x ** (e - 1.0),), "pow")


def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a, lo, hi):
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# activations


def relu(a):
    x = a.data
    return _make(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _make(y, (a,), bw, "gelu")


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    y = _stable_sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def softplus(a):
    x = a.data
    y = np.logaddexp(0.0, x)
    s = _stable_sigmoid(x)
    return _make(y, (a,), lambda g: (g * s,), "softplus")


def softmax(a, axis=-1):
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), bw, "softmax")


def sparsemax_forward(z, axis=-1):
    """Euclidean projection of each slice along ``axis`` onto the simplex."""
    z = np.moveaxis(np.asarray(z, dtype=DTYPE), axis, -1)
    n = z.shape[-1]
    srt = -np.sort(-z, axis=-1)
    cum = np.cumsum(srt, axis=-1)
    k = np.arange(1, n + 1, dtype=DTYPE)
    support = 1.0 + k * srt > cum
    k_max = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cum, k_max - 1, axis=-1) - 1.0) / k_max
    p = np.maximum(z - tau, 0.0)
    return np.moveaxis(p, -1, axis)


def sparsemax(a, axis=-1):
    p = sparsemax_forward(a.data, axis)
    supp = p > 0

    def bw(g):
        v = (g * supp).sum(axis=axis, keepdims=True) / supp.sum(axis=axis, keepdims=True)
        return (supp * (g - v),)

    return _make(p, (a,), bw, "sparsemax")


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalise over the last axis, then apply the optional affine ``gamma``/``beta`` row vectors."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    var = d.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * inv
    y = xhat
    parents = [x]
    if gamma is not None:
        if gamma.shape != (d.shape[-1],):
            raise ShapeError(f"layer_norm: gamma shape {gamma.shape} != ({d.shape[-1]},)")
        y = y * gamma.data
        parents.append(gamma)
    if beta is not None:
        if beta.shape != (d.shape[-1],):
            raise ShapeError(f"layer_norm: beta shape {beta.shape} != ({d.shape[-1]},)")
        y = y + beta.data
        parents.append(beta)
    n = d.shape[-1]

    def bw(g):
        gx = g * gamma.data if gamma is not None else g
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        out = [dx]
        if gamma is not None:
            out.append((g * xhat).reshape(-1, n).sum(axis=0))
        if beta is not None:
            out.append(g.reshape(-1, n).sum(axis=0))
        return out

    return _make(y, parents, bw, "layer_norm")


def dropout(a, rate, train, rng=None):
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    """``(..., n, k) @ (k, m)`` or batched ``(B, n, k) @ (B, k, m)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2:
        raise ShapeError(f"matmul: need ndim >= 1 and 2, got shapes {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    if bd.ndim == 2:
        out = ad @ bd

        def bw(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                a2 = ad.reshape(-1, ad.shape[-1])
                gb = a2.T @ g.reshape(-1, bd.shape[-1])
            return ga, gb

        return _make(out, (a, b), bw, "matmul")
    if ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, shapes {a.shape} and {b.shape}")
    out = ad @ bd

    def bw_batched(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw_batched, "matmul")


def sum_(a, axis=None, keepdims=False):
    x = a.data
    y = x.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    x = a.data
    count = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    y = x.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(y, (a,), bw, "mean")


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        return [np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])]

    return _make(y, tensors, bw, "concat")


def slice_(a, key):
    x = a.data
    y = x[key]

    def bw(g):
        out = np.zeros_like(x)
        np.add.at(out, key, g)
        return (out,)

    return _make(np.array(y, dtype=DTYPE), (a,), bw, "slice")


def reshape(a, shape):
    x = a.data
    try:
        y = x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None
    return _make(y, (a,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(a, axes=None):
    x = a.data
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(x.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def embedding_lookup(table, idx):
    """Rows of ``table`` (V, d) selected by integer array ``idx`` -> ``idx.shape + (d,)``."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding_lookup: indices must be integers, got {idx.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: index out of range for table of {table.shape[0]} rows")
    V, d = table.shape

    def bw(g):
        out = np.zeros((V, d))
        np.add.at(out, idx.reshape(-1), g.reshape(-1, d))
        return (out,)

    return _make(table.data[idx], (table,), bw, "embedding_lookup")


def where_const(mask, a, value):
    """Elementwise ``a`` where ``mask`` else the constant ``value``."""
    mask = np.asarray(mask, dtype=bool)
    return _make(np.where(mask, a.data, value), (a,), lambda g: (g * mask,), "where")
