"""Small reverse-mode autodiff over numpy arrays.

Each op returns a new :class:`Tensor` holding references to its parents and a
closure that maps the output gradient to parent gradients. ``backward`` walks
the graph in reverse topological order. Only the ops the world model and the
agents need are provided.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


class ShapeMismatch(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        live = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = live
        out._parents = parents if live else ()
        out._backward = backward if live else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph traversal -----------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / other) if not isinstance(other, Tensor) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _coerce(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._make(out, (a, b),
                        lambda g: (_unbroadcast(g / bd, ad.shape),
                                   _unbroadcast(-g * out / bd, bd.shape)))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max against a constant; no gradient where the floor wins."""
    mask = a.data >= floor
    return Tensor._make(np.where(mask, a.data, floor).astype(a.dtype), (a,), lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- elementwise unary -------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return Tensor._make(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype)
    return Tensor._make(out, (a,), lambda g: (g * _sigmoid(x),))


# -- reductions and shape ----------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dt = a.shape, a.dtype

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis or i is None for i in parts)

    def back(g):
        full = np.zeros(shape, dtype=dt)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), back)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [t for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [t for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._make(np.stack([t.data for t in ts], axis=axis), tuple(ts), back)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# -- fused ops ---------------------------------------------------------------

def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return Tensor._make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-3) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return Tensor._make(xhat * gd + bias.data, (a, gain, bias), back)


def straight_through(onehot: np.ndarray, probs: Tensor) -> Tensor:
    """Forward value ``onehot``; gradient passes unchanged to ``probs``."""
    return Tensor._make(onehot.astype(probs.dtype), (probs,), lambda g: (g,))
