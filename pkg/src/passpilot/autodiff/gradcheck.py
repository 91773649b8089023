"""Central finite-difference checks for the reverse-mode engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from passpilot.autodiff.tensor import Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(*x.shape))
    for idx in it:
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(a: np.ndarray, b: np.ndarray, atol: float = 1e-7) -> float:
    """Largest ``|a - b| / max(|a|, |b|, atol)`` over all entries."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), atol)
    return float(np.max(np.abs(a - b) / scale))


def check_function(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6,
                   atol: float = 1e-7) -> float:
    """Compare autodiff and numeric gradients of ``sum(fn(*inputs))``; returns max rel. error."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]

    def value() -> float:
        return float(np.sum(fn(*[Tensor(a) for a in arrays]).data))

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*ts)
    out.sum().backward() if out.data.ndim else out.backward()
    worst = 0.0
    for a, t in zip(arrays, ts):
        analytic = np.zeros_like(a) if t.grad is None else t.grad
        worst = max(worst, max_rel_error(analytic, numeric_grad(value, a, eps), atol))
    return worst


def check_params(loss: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-6,
                 atol: float = 1e-7, max_per_param: int | None = None,
                 rng: np.random.Generator | None = None) -> dict[str, float]:
    """Per-parameter max relative error for a scalar loss closure over ``params``.

    ``max_per_param`` limits the checked coordinates per tensor (chosen with ``rng``).
    """
    for p in params.values():
        p.grad = None
    loss().backward()
    analytic = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for n, p in params.items()}
    rng = rng or np.random.default_rng(0)
    out = {}
    for n, p in params.items():
        idx = list(np.ndindex(*p.data.shape))
        if max_per_param is not None and len(idx) > max_per_param:
            pick = rng.choice(len(idx), size=max_per_param, replace=False)
            idx = [idx[i] for i in sorted(pick)]
        num = numeric_grad(lambda: loss().item(), p.data, eps, idx)
        sel = tuple(np.array(idx).T)
        out[n] = max_rel_error(analytic[n][sel], num[sel], atol)
    return out
