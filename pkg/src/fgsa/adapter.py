"""Trainable adapter branch around the frozen ViT.

FBNM turns the raw image into a frequency-refined 1/8, 1/16, 1/32 pyramid
and injects it into the first ViT tokens. After every backbone group an
FBFE step refines the ViT tokens with FGSAttn, lets the pyramid query them
(extractor + convolutional FFN), and, except after the last group, lets the
tokens query the updated pyramid (injector).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import layers as L
from .backbone import TokenSequence, attention
from .fgsattn import FGSAttn, fgsattn_tokens
from .nn import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .tensor import Tensor, as_tensor, concat, reshape

LEVEL_STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class AdapterConfig:
    D: int = 64
    d: int = 1
    heads: int = 4
    ffn_mult: int = 4
    stem_channels: int = 16

    def __post_init__(self):
        if self.D <= 0:
            raise ValueError(f"adapter dimension D must be positive, got {self.D}")
        if self.d < 1:
            raise ValueError(f"ring width d must be >= 1, got {self.d}")
        if self.D % self.heads:
            raise ValueError(f"D={self.D} not divisible by heads={self.heads}")


@dataclass
class FeaturePyramid:
    levels: list[Tensor]
    flat: Tensor | None = None
    shapes: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.shapes:
            self.shapes = [tuple(lv.shape[:2]) for lv in self.levels]

    @property
    def rows(self) -> int:
        return sum(h * w for h, w in self.shapes)


def flatten_levels(levels: list[Tensor]) -> Tensor:
    """Row-major flatten of each [h, w, D] level, concatenated in level order."""
    return concat([reshape(lv, (lv.shape[0] * lv.shape[1], lv.shape[2])) for lv in levels], axis=0)


def unflatten_levels(flat: Tensor, shapes: list[tuple[int, int]]) -> list[Tensor]:
    total = sum(h * w for h, w in shapes)
    if flat.shape[0] != total:
        raise ValueError(f"flat pyramid has {flat.shape[0]} rows, shapes need {total}")
    out, start = [], 0
    for h, w in shapes:
        out.append(reshape(flat[start:start + h * w], (h, w, flat.shape[1])))
        start += h * w
    return out


class CrossAttention(Module):
    """Multi-head attention: queries from one stream, keys/values from another."""

    def __init__(self, rng, dim: int, heads: int, zero_out: bool = True):
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim, zero=zero_out)
        self.heads = heads
        self.dim = dim

    def __call__(self, query, keyval, probs_out: list | None = None) -> Tensor:
        query, keyval = as_tensor(query), as_tensor(keyval)
        if query.shape[1] != self.dim or keyval.shape[1] != self.dim:
            raise ValueError(f"cross-attention width {self.dim} vs query {query.shape} "
                             f"/ keyval {keyval.shape}")
        ctx = attention(self.q(query), self.k(keyval), self.v(keyval), self.heads, probs_out)
        return self.out(ctx)


def cross_attention(query, keyval, params: CrossAttention, probs_out: list | None = None) -> Tensor:
    return params(query, keyval, probs_out)


class NormedCrossAttention(Module):
    """Residual branch ``CA(LN(query), LN(keyval))``."""

    def __init__(self, rng, dim: int, heads: int):
        self.q_norm = LayerNorm(dim)
        self.kv_norm = LayerNorm(dim)
        self.attn = CrossAttention(rng, dim, heads)

    def __call__(self, query, keyval) -> Tensor:
        return self.attn(self.q_norm(query), self.kv_norm(keyval))


class ConvStem(Module):
    """conv s2 -> conv -> conv -> maxpool s2: 1/4 resolution."""

    def __init__(self, rng, c0: int):
        self.conv1 = Conv2d(rng, 3, c0, 3, stride=2)
        self.conv2 = Conv2d(rng, c0, c0, 3)
        self.conv3 = Conv2d(rng, c0, c0, 3)

    def __call__(self, image) -> Tensor:
        image = as_tensor(image)
        h, w = image.shape[:2]
        if h % 32 or w % 32:
            raise ValueError(f"image extents {h}x{w} must be divisible by 32")
        x = L.gelu(self.conv1(image))
        x = L.gelu(self.conv2(x))
        x = L.gelu(self.conv3(x))
        return L.maxpool2d(x, 3, stride=2, pad=1)


class PyramidStage(Module):
    def __init__(self, rng, c_in: int, c_out: int, h: int, w: int, d: int):
        self.conv = Conv2d(rng, c_in, c_out, 3, stride=2)
        self.fgsattn = FGSAttn(rng, h, w, d)

    def __call__(self, x, trace: dict | None = None) -> Tensor:
        out, _ = self.fgsattn(L.gelu(self.conv(x)), trace)
        return out


class FBNM(Module):
    def __init__(self, rng, cfg: AdapterConfig, image_size: int, embed_dim: int):
        if embed_dim != cfg.D:
            raise ValueError(f"adapter D={cfg.D} must equal the backbone width {embed_dim}")
        c0 = cfg.stem_channels
        chans = (c0, 2 * c0, 4 * c0, 4 * c0)
        self.stem = ConvStem(rng, c0)
        self.stages = [PyramidStage(rng, chans[i], chans[i + 1], image_size // s, image_size // s, cfg.d)
                       for i, s in enumerate(LEVEL_STRIDES)]
        self.proj = [Conv2d(rng, chans[i + 1], cfg.D, 1) for i in range(3)]
        self.inject = NormedCrossAttention(rng, cfg.D, cfg.heads)

    def pyramid(self, stem_out, traces: list | None = None) -> FeaturePyramid:
        levels, x = [], stem_out
        for stage in self.stages:
            tr = {} if traces is not None else None
            x = stage(x, tr)
            if traces is not None:
                traces.append(tr)
            levels.append(x)
        return FeaturePyramid(levels)

    def project_flatten(self, pyr: FeaturePyramid) -> FeaturePyramid:
        levels = [proj(lv) for proj, lv in zip(self.proj, pyr.levels)]
        return FeaturePyramid(levels, flat=flatten_levels(levels))

    def inject_tokens(self, seq: TokenSequence, pyr: FeaturePyramid) -> TokenSequence:
        return TokenSequence(seq.tokens + self.inject(seq.tokens, pyr.flat), seq.grid)

    def __call__(self, image, seq: TokenSequence, traces: list | None = None):
        pyr = self.project_flatten(self.pyramid(self.stem(image), traces))
        return self.inject_tokens(seq, pyr), pyr


class ConvFFN(Module):
    """1x1 (D -> hD) -> depthwise 3x3 -> GELU -> 1x1 (hD -> D), per pyramid level."""

    def __init__(self, rng, dim: int, mult: int):
        hidden = dim * mult
        self.fc1 = Conv2d(rng, dim, hidden, 1)
        self.dw = DepthwiseConv2d(rng, hidden, 3)
        self.fc2 = Conv2d(rng, hidden, dim, 1, zero=True)

    def __call__(self, flat: Tensor, shapes) -> Tensor:
        levels = unflatten_levels(flat, shapes)
        return flatten_levels([self.fc2(L.gelu(self.dw(self.fc1(lv)))) for lv in levels])


class FBFE(Module):
    def __init__(self, rng, cfg: AdapterConfig, grid: tuple[int, int], is_last: bool):
        self.fgsattn = FGSAttn(rng, grid[0], grid[1], cfg.d)
        self.extract = NormedCrossAttention(rng, cfg.D, cfg.heads)
        self.ffn = ConvFFN(rng, cfg.D, cfg.ffn_mult)
        self.is_last = is_last
        self.inject = None if is_last else NormedCrossAttention(rng, cfg.D, cfg.heads)

    def __call__(self, seq: TokenSequence, pyr: FeaturePyramid, trace: dict | None = None):
        vit_hat = fgsattn_tokens(seq.tokens, seq.grid, self.fgsattn, trace)
        ada_hat = pyr.flat + self.extract(pyr.flat, vit_hat)
        ada_next = ada_hat + self.ffn(ada_hat, pyr.shapes)
        new_pyr = FeaturePyramid(unflatten_levels(ada_next, pyr.shapes), flat=ada_next,
                                 shapes=pyr.shapes)
        if self.is_last:
            return None, new_pyr
        return TokenSequence(vit_hat + self.inject(vit_hat, ada_next), seq.grid), new_pyr


def fbfe_step(seq: TokenSequence, pyr: FeaturePyramid, module: FBFE, is_last: bool | None = None,
              trace: dict | None = None):
    """One FBFE exchange. Returns (tokens or None after the last group, pyramid)."""
    if is_last is not None and is_last != module.is_last:
        raise ValueError("is_last does not match how the FBFE module was built")
    return module(seq, pyr, trace)
