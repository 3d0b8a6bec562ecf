"""Tape-free reverse-mode differentiation over numpy arrays.

Each :class:`Tensor` produced by an op remembers its parents and a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
graph in reverse topological order and accumulates into ``Parameter.grad``.
Graphs are released after one backward pass.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import UsageError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph (sampling, evaluation)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=DTYPE)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """Trainable leaf with a persistent gradient buffer of the same shape."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _node(data, parents, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, True)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form avoids overflow warnings for large |x|
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------- contractions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), bw)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum; every operand index must survive in the output or the other operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for mine, other in ((sa, sb), (sb, sa)):
        if len(set(mine)) != len(mine) or not set(mine) <= set(out) | set(other):
            raise UsageError(f"einsum spec {spec!r} is not differentiable by this implementation")
    return _node(np.einsum(spec, a.data, b.data, optimize=True), (a, b),
                 lambda g: (np.einsum(f"{out},{sb}->{sa}", g, b.data, optimize=True),
                            np.einsum(f"{out},{sa}->{sb}", g, a.data, optimize=True)))


# --------------------------------------------------------------------- shaping

def getitem(a, index) -> Tensor:
    """Basic (non-repeating) indexing."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _node(a.data[index], (a,), bw)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def embedding(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]``; repeated ids accumulate gradient."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(weight.data[ids], (weight,), bw)


# -------------------------------------------------------------------- LSTM

def lstm_cell(x_proj, h, c, w_h) -> Tensor:
    """Fused LSTM step; returns ``concat([h_new, c_new], -1)``.

    ``x_proj`` is the precomputed ``x W_x + b`` (B, 4n); gate order is
    input, forget, output, candidate.
    """
    x_proj, h, c, w_h = as_tensor(x_proj), as_tensor(h), as_tensor(c), as_tensor(w_h)
    n = h.shape[-1]
    gates = x_proj.data + h.data @ w_h.data
    sig = 0.5 * (np.tanh(0.5 * gates[:, :3 * n]) + 1.0)
    i, f, o = sig[:, :n], sig[:, n:2 * n], sig[:, 2 * n:]
    g = np.tanh(gates[:, 3 * n:])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(grad):
        gh, gc = grad[:, :n], grad[:, n:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dgates = np.empty_like(gates)
        dgates[:, :n] = dc * g * i * (1.0 - i)
        dgates[:, n:2 * n] = dc * c.data * f * (1.0 - f)
        dgates[:, 2 * n:3 * n] = gh * tc * o * (1.0 - o)
        dgates[:, 3 * n:] = dc * i * (1.0 - g * g)
        return dgates, dgates @ w_h.data.T, dc * f, h.data.T @ dgates

    return _node(np.concatenate([h_new, c_new], axis=-1), (x_proj, h, c, w_h), bw)


# ----------------------------------------------------------------- reductions

def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.sum(a.data, axis=axis), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw)


def pick(a, index) -> Tensor:
    """``a[i, index[i]]`` for a 2-D tensor, the gather behind cross-entropy."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros_like(a.data)
        full[rows, index] = g
        return (full,)

    return _node(a.data[rows, index], (a,), bw)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    return mean(-pick(log_softmax(logits), targets))


# -------------------------------------------------------------------- backward

def _toposort(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``Parameter.grad``.

    Parameters not reachable from ``loss`` keep whatever ``grad`` they had
    (zero after :func:`zero_grad` or an optimizer step).
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward() needs a Tensor produced by a forward pass")
    if loss.backward_fn is None:
        raise UsageError("backward() called on a tensor with no recorded forward graph "
                         "(called before forward, under no_grad, or graph already consumed)")
    if grad is None:
        if loss.data.size != 1:
            raise UsageError("backward() without an explicit grad needs a scalar loss")
        grad = np.ones_like(loss.data)

    grads = {id(loss): np.asarray(grad, dtype=DTYPE)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node.parents, node.backward_fn = (), None


def zero_grad(params) -> None:
    for p in params:
        p.grad[...] = 0.0
