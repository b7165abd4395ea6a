"""Toy plain ViT split into equal groups of transformer layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .nn import LayerNorm, Linear, Module, trunc_normal
from .optim import ParamSet
from .tensor import Tensor, as_tensor, reshape, transpose


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 8
    heads: int = 4
    group_count: int = 4
    layers_per_group: int = 2
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.depth != self.group_count * self.layers_per_group:
            raise ValueError(f"depth {self.depth} != group_count {self.group_count} x "
                             f"layers_per_group {self.layers_per_group}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return g, g


@dataclass
class TokenSequence:
    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        if self.tokens.shape[0] != self.grid[0] * self.grid[1]:
            raise ValueError(f"{self.tokens.shape[0]} tokens do not match grid {self.grid}")


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return transpose(reshape(x, (n, heads, d // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    h, n, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
              probs_out: list | None = None) -> Tensor:
    """Multi-head softmax(q k^T / sqrt(dh)) v on [N, D] projections."""
    if q.shape[1] != k.shape[1] or k.shape != v.shape:
        raise ValueError(f"attention width mismatch q{q.shape} k{k.shape} v{v.shape}")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / np.sqrt(qh.shape[-1])
    probs = L.softmax((qh @ transpose(kh, (0, 2, 1))) * scale, axis=-1)
    if probs_out is not None:
        probs_out.append(probs)
    return merge_heads(probs @ vh)


class SelfAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim)
        self.heads = heads
        self.dim = dim

    def __call__(self, x: Tensor, probs_out: list | None = None) -> Tensor:
        qkv = self.qkv(x)
        d = self.dim
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        return self.proj(attention(q, k, v, self.heads, probs_out))


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x):
        return self.fc2(L.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer layer."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, dim * mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(Module):
    def __init__(self, rng, cfg: BackboneConfig):
        p = cfg.patch_size
        self.proj = Linear(rng, p * p * 3, cfg.embed_dim)
        self.pos_embed = trunc_normal(rng, (cfg.grid[0] * cfg.grid[1], cfg.embed_dim))
        self.cfg = cfg

    def __call__(self, image) -> TokenSequence:
        image = as_tensor(image)
        s, p = self.cfg.image_size, self.cfg.patch_size
        if image.shape != (s, s, 3):
            raise ValueError(f"expected a {s}x{s}x3 image, got {image.shape}")
        g = s // p
        patches = reshape(transpose(reshape(image, (g, p, g, p, 3)), (0, 2, 1, 3, 4)),
                          (g * g, p * p * 3))
        return TokenSequence(self.proj(patches) + self.pos_embed, (g, g))


class ViTBackbone(Module):
    """Patch embedding plus ``depth`` layers stored as ``group_count`` groups."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.cfg = cfg
        self.patch_embed = PatchEmbed(rng, cfg)
        self.blocks = [Block(rng, cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)]

    def embed(self, image) -> TokenSequence:
        return self.patch_embed(image)

    def group(self, group_id: int) -> list[Block]:
        if not 0 <= group_id < self.cfg.group_count:
            raise ValueError(f"group id {group_id} outside [0, {self.cfg.group_count})")
        k = self.cfg.layers_per_group
        return self.blocks[group_id * k:(group_id + 1) * k]

    def run_group(self, seq: TokenSequence, group_id: int) -> TokenSequence:
        x = seq.tokens
        for blk in self.group(group_id):
            x = blk(x)
        return TokenSequence(x, seq.grid)

    def param_set(self, prefix: str = "backbone.") -> ParamSet:
        return ParamSet(self.named_parameters(prefix))


def freeze_backbone(params: ParamSet, prefix: str = "backbone.") -> ParamSet:
    """Mark every backbone tensor frozen; everything else keeps its flag."""
    return params.freeze(prefix)
