"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the handful of operations the temporal-convolution networks need are
provided. Every op records its inputs and a closure that maps the output
gradient to input gradients; :meth:`Tensor.backward` walks the recorded graph
in reverse topological order.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording, e.g. for pseudo-label predictions."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        """Backpropagate from this scalar, accumulating into leaf ``.grad``.

        The graph is released afterwards; a second call raises.
        """
        if self._consumed:
            raise RuntimeError("backward() already called on this graph")
        if not self._parents:
            raise RuntimeError("backward() needs a tensor produced by a recorded forward pass")
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar")

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
                if p._parents and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._parents:
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg
                elif parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad += pg
            node._parents = ()
            node._backward = None
            node._consumed = True

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a plain scalar."""
    a = _wrap(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,))
    sa, sb = a.shape, b.shape
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)))


def matmul(x, w) -> Tensor:
    """``x[..., D] @ w[D, C]``."""
    x, w = _wrap(x), _wrap(w)

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if w.requires_grad else None
        return gx, gw

    return _make(x.data @ w.data, (x, w), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def mean(x, axis) -> Tensor:
    x = _wrap(x)
    n = x.shape[axis]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _make(x.data.mean(axis=axis), (x,), backward)


def temporal_conv(x, w) -> Tensor:
    """Zero-padded 'same' convolution along axis 1.

    ``x`` is ``(B, T, C_in)``, ``w`` is ``(k, C_in, C_out)`` with odd ``k``;
    output is ``(B, T, C_out)``.
    """
    x, w = _wrap(x), _wrap(w)
    B, T, C = x.shape
    k, _, C_out = w.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, j:j + T] for j in range(k)], axis=-1)
    wf = w.data.reshape(k * C, C_out)

    def backward(g):
        gw = gx = None
        if w.requires_grad:
            gw = (cols.reshape(-1, k * C).T @ g.reshape(-1, C_out)).reshape(w.shape)
        if x.requires_grad:
            gcols = g @ wf.T
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + T] += gcols[..., j * C:(j + 1) * C]
            gx = gxp[:, pad:pad + T]
        return gx, gw

    return _make(cols @ wf, (x, w), backward)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(logits, targets, weights) -> Tensor:
    """``sum_i weights[i] * -log softmax(logits[i])[targets[i]]`` as a scalar."""
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    logp = log_softmax(logits.data)
    rows = np.arange(len(targets))
    value = -(weights * logp[rows, targets]).sum()

    def backward(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (g * weights[:, None] * d,)

    return _make(value, (logits,), backward)
