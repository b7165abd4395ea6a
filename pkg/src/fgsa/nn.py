"""Tiny module system: parameter registration, initializers, common blocks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import layers as L
from .tensor import Tensor


class Module:
    """Holds parameters (``Tensor`` attributes) and child modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in) / np.sqrt(2.0)
    return param(rng.uniform(-bound, bound, size=shape))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return param(np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, zero: bool = False, bias: bool = True):
        self.weight = param(np.zeros((d_in, d_out))) if zero else kaiming_uniform(rng, (d_in, d_out), d_in)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return L.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1, pad: int | None = None,
                 zero: bool = False):
        shape = (k, k, c_in, c_out)
        self.weight = param(np.zeros(shape)) if zero else kaiming_uniform(rng, shape, c_in * k * k)
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x):
        return L.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class DepthwiseConv2d(Module):
    def __init__(self, rng, channels: int, k: int = 3):
        self.weight = kaiming_uniform(rng, (k, k, channels), k * k)
        self.bias = param(np.zeros(channels))
        self.pad = k // 2

    def __call__(self, x):
        return L.depthwise_conv2d(x, self.weight, self.bias, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x):
        return L.layer_norm(x, self.gamma, self.beta)
