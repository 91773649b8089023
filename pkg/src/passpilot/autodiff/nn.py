"""Parameter storage, the layer primitives, and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from passpilot.autodiff import tensor as T
from passpilot.autodiff.tensor import ShapeMismatch, Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class ParamStore:
    """Named parameters plus Adam moments and a step counter."""

    dtype: type = np.float32
    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self.params[n].grad = None

    def grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for n in self.names(prefix):
            g = self.params[n].grad
            out[n] = np.zeros_like(self.params[n].data) if g is None else g
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def astype(self, dtype) -> ParamStore:
        new = ParamStore(dtype=dtype, step=self.step)
        for n, p in self.params.items():
            new.add(n, p.data)
            new.m[n] = self.m[n].astype(dtype)
            new.v[n] = self.v[n].astype(dtype)
        return new


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """Linear layer with optional LayerNorm and SiLU, registered in a store."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, *, norm: bool = True, act: str = "silu",
                 zero_init: bool = False):
        self.n_in, self.n_out = n_in, n_out
        w = np.zeros((n_in, n_out)) if zero_init else glorot(rng, n_in, n_out)
        self.W = store.add(f"{name}.W", w)
        self.b = store.add(f"{name}.b", np.zeros(n_out))
        self.gain = self.shift = None
        if norm:
            self.gain = store.add(f"{name}.ln_g", np.ones(n_out))
            self.shift = store.add(f"{name}.ln_b", np.zeros(n_out))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.W, self.b, self.act,
                     ln=(self.gain, self.shift) if self.gain is not None else None)


def dense(x: Tensor, W: Tensor, b: Tensor, activation: str = "linear",
          ln: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """``act(LN(x @ W + b))``; LN is skipped when ``ln`` is None."""
    if x.shape[-1] != W.shape[0] or b.shape[-1] != W.shape[1]:
        raise ShapeMismatch(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    y = T.matmul(x, W) + b
    if ln is not None:
        y = T.layer_norm(y, ln[0], ln[1])
    if activation == "silu":
        y = T.silu(y)
    elif activation != "linear":
        raise ValueError(f"unknown activation {activation!r}")
    return y


class MLP:
    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int, layers: int,
                 n_out: int, rng: np.random.Generator, *, zero_out: bool = False):
        self.hidden = []
        d = n_in
        for i in range(layers):
            self.hidden.append(Dense(store, f"{name}.h{i}", d, hidden, rng))
            d = hidden
        self.out = Dense(store, f"{name}.out", d, n_out, rng, norm=False, act="linear",
                         zero_init=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.hidden:
            x = layer(x)
        return self.out(x)


class GRUCell:
    """Standard gated recurrent cell (reset gate applied to the hidden projection)."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.Wx = store.add(f"{name}.Wx", glorot(rng, n_in, 3 * n_hidden))
        self.Wh = store.add(f"{name}.Wh", glorot(rng, n_hidden, 3 * n_hidden))
        self.bx = store.add(f"{name}.bx", np.zeros(3 * n_hidden))
        self.bh = store.add(f"{name}.bh", np.zeros(3 * n_hidden))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        return gru_step(h, x, self.Wx, self.Wh, self.bx, self.bh)


def gru_step(h: Tensor, x: Tensor, Wx: Tensor, Wh: Tensor, bx: Tensor, bh: Tensor) -> Tensor:
    n = h.shape[-1]
    if Wx.shape != (x.shape[-1], 3 * n) or Wh.shape != (n, 3 * n):
        raise ShapeMismatch(f"gru: h{h.shape} x{x.shape} Wx{Wx.shape} Wh{Wh.shape}")
    gx = T.matmul(x, Wx) + bx
    gh = T.matmul(h, Wh) + bh
    r = T.sigmoid(gx[:, :n] + gh[:, :n])
    u = T.sigmoid(gx[:, n:2 * n] + gh[:, n:2 * n])
    cand = T.tanh(gx[:, 2 * n:] + r * gh[:, 2 * n:])
    return cand + u * (h - cand)


def categorical_straight_through(logits: Tensor, rng: np.random.Generator | None,
                                 unimix: float = 0.01, mode: bool = False):
    """Sample one-hot codes per group from ``logits`` of shape (..., G, K).

    Returns ``(sample, probs)`` where ``sample`` is exactly one-hot in the
    forward pass and carries the gradient of the mixed softmax probabilities.
    ``mode=True`` takes the argmax instead of sampling.
    """
    k = logits.shape[-1]
    probs = T.softmax(logits, axis=-1)
    if unimix > 0:
        probs = probs * (1.0 - unimix) + unimix / k
    p = probs.data.astype(np.float64)
    if mode:
        idx = p.argmax(axis=-1)
    else:
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(size=p.shape[:-1] + (1,)) * cdf[..., -1:]
        idx = np.minimum((cdf < u).sum(axis=-1), k - 1)
    onehot = np.zeros(p.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    return T.straight_through(onehot, probs), probs


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              weight_decay: float = 0.0, clip: float | None = 100.0,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> float:
    """One Adam update with global-norm clipping and decoupled weight decay.

    Returns the pre-clip gradient norm. Raises :class:`NonFiniteGradient`
    (leaving parameters untouched) if any gradient is NaN or infinite.
    """
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"grad {name}: {g.shape} vs {store.params[name].shape}")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    scale = 1.0
    if clip is not None and norm > clip:
        scale = clip / norm
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = store.params[name]
        g = g * scale
        m = store.m[name] = b1 * store.m[name] + (1.0 - b1) * g
        v = store.v[name] = b2 * store.v[name] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data = (p.data - lr * update).astype(store.dtype)
    return norm
