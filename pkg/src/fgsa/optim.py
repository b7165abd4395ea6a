"""Named parameter sets and the AdamW optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Ordered name -> Tensor map. ``Tensor.requires_grad`` is the trainable flag."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._params: dict[str, Tensor] = {}
        for name, t in items:
            if name in self._params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if v.requires_grad}

    def frozen(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if not v.requires_grad}

    def freeze(self, prefix: str = "") -> "ParamSet":
        for k, v in self._params.items():
            if k.startswith(prefix):
                v.requires_grad = False
        return self

    def count(self, trainable: bool | None = None) -> int:
        return sum(v.size for v in self._params.values()
                   if trainable is None or v.requires_grad == trainable)

    def trainable_fraction(self) -> float:
        total = self.count()
        return self.count(True) / total if total else 0.0

    def zero_grad(self) -> None:
        for v in self._params.values():
            v.grad = None


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam. Frozen tensors are never touched."""

    params: ParamSet
    lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    state: dict = field(default_factory=dict)

    def step(self) -> None:
        adamw_step(self.params, self.lr, self.weight_decay, self.betas, self.eps,
                   state=self.state, t=self.t + 1)
        self.t += 1


def adamw_step(params: ParamSet, lr: float, weight_decay: float = 0.0,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               state: dict | None = None, t: int = 1) -> ParamSet:
    """One in-place AdamW update of every trainable tensor in ``params``.

    ``state`` maps names to (m, v) moment arrays and is updated in place.
    Raises if a trainable tensor has no gradient.
    """
    state = {} if state is None else state
    b1, b2 = betas
    trainable = params.trainable()
    missing = [k for k, v in trainable.items() if v.grad is None]
    if missing:
        raise ValueError(f"no gradient for trainable parameter(s): {', '.join(missing[:5])}")
    for name, p in trainable.items():
        g = p.grad
        m, v = state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[name] = (m, v)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        if weight_decay:
            p.data *= 1 - lr * weight_decay
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return params
