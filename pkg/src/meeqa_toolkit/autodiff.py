"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each :class:`Tensor` records the op that produced it and a closure that
pushes its gradient to its parents. :func:`backward` walks the graph in
reverse topological order. Only what the encoder, the heads and the losses
need is implemented; softmax, layer norm and GELU are fused ops with
hand-written vector-Jacobian products.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError

MASK_FILL = -1e30  # log-probability written at masked positions (exp -> 0.0)


class Tensor:
    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_vjp")

    def __init__(self, data, parents=(), op="const", requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad
        self._vjp = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(lift(other)))

    def __rsub__(self, other):
        return add(lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = lift(other)
        return mul(self, reciprocal(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self):
        backward(self)


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, vjp) -> Tensor:
    out = Tensor(data, parents, op, any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _node(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def reciprocal(a) -> Tensor:
    out = 1.0 / a.data
    return _node(out, (a,), "reciprocal", lambda g: (-g * out * out,))


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    return _node(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, (a,), "gelu", vjp)


# -- shape & reduction --------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), "sum", vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), "getitem", vjp)


def take_rows(table, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array ``ids``."""

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(table.data[ids], (table,), "take_rows", vjp)


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)

    def vjp(g):
        if b.data.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = g.reshape(-1) @ a.data.reshape(-1, a.shape[-1])
            return _unbroadcast(ga, a.shape), gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), "matmul", vjp)


# -- fused normalizations -----------------------------------------------------

def _check_mask(mask: np.ndarray, axis: int) -> None:
    if not mask.any(axis=axis).all():
        from .errors import DegenerateMaskError
        raise DegenerateMaskError("softmax over a fully masked row")


def masked_softmax(a, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        _check_mask(mask, axis)
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), "softmax", vjp)


def masked_log_softmax(a, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Log-softmax restricted to ``mask``; masked entries hold ``MASK_FILL``.

    Their gradient is exactly zero.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        _check_mask(mask, axis)
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    logp = x - lse
    p = np.exp(logp)
    if mask is not None:
        logp = np.where(mask, logp, MASK_FILL)

    def vjp(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(logp, (a,), "log_softmax", vjp)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        d = x.shape[-1]
        gx = g * gain.data
        dx = inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(out, (a, gain, bias), "layer_norm", vjp)


# -- driver -------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _trace(root: Tensor, target: Tensor) -> list[str]:
    """Op names on one path from ``root`` down to ``target``."""
    prev = {id(root): None}
    nodes = {id(root): root}
    queue = [root]
    while queue:
        node = queue.pop(0)
        if node is target:
            break
        for p in node.parents:
            if id(p) not in prev:
                prev[id(p)] = node
                nodes[id(p)] = p
                queue.append(p)
    path, cur = [], target
    while cur is not None:
        path.append(cur.op)
        cur = prev.get(id(cur))
    return path[::-1]


def backward(root: Tensor, check_finite: bool = True) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable leaf.

    ``root`` must be a scalar. Raises :class:`NumericError` naming the op
    path when a value or gradient on the graph is not finite.
    """
    if root.data.size != 1:
        raise ValueError("backward needs a scalar output")
    order = _topo(root)
    for node in order:  # parents come first, so this finds where a bad value originates
        node.grad = None
        if check_finite and not np.isfinite(node.data).all():
            raise NumericError(f"non-finite value in {node.op}", _trace(root, node))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if check_finite and not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient flowing from {node.op}", _trace(root, parent))
            parent.grad = g if parent.grad is None else parent.grad + g
