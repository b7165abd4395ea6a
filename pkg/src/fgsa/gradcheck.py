"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(out) -> float:
    data = out.data if isinstance(out, Tensor) else np.asarray(out)
    if data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {data.shape}")
    return float(data.reshape(()))


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5,
               max_elems: int | None = None, seed: int = 0) -> float:
    """Max over checked elements of |analytic - numeric| / max(1, |numeric|).

    ``f`` is called as ``f(*xs)`` and must return a scalar Tensor. The
    tensors in ``x`` are perturbed in place and restored. With
    ``max_elems`` only a random subset of each tensor's entries is probed.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    flags = [t.requires_grad for t in xs]
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    try:
        out = f(*xs)
        _scalar(out)
        out.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for t, ga in zip(xs, analytic):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_elems is not None and flat.size > max_elems:
                    idx = rng.choice(flat.size, size=max_elems, replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = _scalar(f(*xs))
                    flat[i] = orig - h
                    fm = _scalar(f(*xs))
                    flat[i] = orig
                    num = (fp - fm) / (2 * h)
                    err = abs(ga.reshape(-1)[i] - num) / max(1.0, abs(num))
                    worst = max(worst, err)
        return worst
    finally:
        for t, flag in zip(xs, flags):
            t.requires_grad = flag
            t.grad = None
