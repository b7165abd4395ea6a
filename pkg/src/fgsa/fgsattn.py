"""Frequency-guided spatial attention.

The channel-pooled map is moved to the centered Fourier domain, its
amplitude spectrum is split into concentric rings of width ``d``, each ring
is rescaled by a weight produced from the ring means, and the map is
rebuilt with the original phase. The min-max normalized result is a
spatial attention map applied residually to the input features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fft as F
from . import layers as L
from .nn import Linear, Module, param
from .tensor import Tensor, as_tensor, concat, flatten, gather, permute_flat, reshape


@dataclass(frozen=True)
class RingPartition:
    height: int
    width: int
    d: int
    n_rings: int
    ring_index: np.ndarray = field(repr=False)
    ring_counts: np.ndarray = field(repr=False)
    members: tuple = field(repr=False)  # flat row-major bin indices per ring
    order: np.ndarray = field(repr=False)  # concatenation of ``members``


def spectrum_radius(h: int, w: int) -> int:
    return min(h, w) // 2


def build_ring_partition(h: int, w: int, d: int) -> RingPartition:
    """Assign every bin of a centered h x w spectrum to a radial ring.

    Ring k < n_rings - 1 holds bins at distance [k d, (k + 1) d) from
    (h // 2, w // 2); the outermost ring also absorbs the corner bins
    lying beyond n_rings * d, so the rings tile the whole plane. A width
    d >= min(h, w) // 2 gives a single ring.
    """
    if h < 2 or w < 2:
        raise ValueError(f"ring partition needs extents >= 2, got {h}x{w}")
    r = spectrum_radius(h, w)
    if d < 1:
        raise ValueError(f"ring width d={d} must be >= 1")
    n_rings = max(1, r // d)
    ii, jj = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    dist2 = (ii ** 2 + jj ** 2).astype(np.int64)
    # integer floor(sqrt) keeps ring edges exact
    radius = np.vectorize(math.isqrt, otypes=[np.int64])(dist2)
    ring = np.minimum(radius // d, n_rings - 1)
    counts = np.bincount(ring.ravel(), minlength=n_rings)
    flat = ring.ravel()
    members = tuple(np.flatnonzero(flat == k) for k in range(n_rings))
    order = np.concatenate(members)
    ring.setflags(write=False)
    counts.setflags(write=False)
    return RingPartition(h, w, d, n_rings, ring, counts, members, order)


def channel_pool(feat) -> Tensor:
    """Channel mean plus channel max: [H, W, C] -> [H, W, 1]."""
    feat = as_tensor(feat)
    return L.channel_avg_pool(feat) + L.channel_max_pool(feat)


def ring_group(amp, part: RingPartition) -> list[Tensor]:
    """Split a centered [H, W] amplitude plane into per-ring value vectors."""
    amp = as_tensor(amp)
    if amp.shape != (part.height, part.width):
        raise ValueError(f"amplitude {amp.shape} does not match partition "
                         f"{(part.height, part.width)}")
    flat = flatten(amp)
    return [gather(flat, idx) for idx in part.members]


def ring_scatter(groups: list[Tensor], part: RingPartition) -> Tensor:
    """Inverse of ``ring_group``."""
    if len(groups) != part.n_rings:
        raise ValueError(f"expected {part.n_rings} groups, got {len(groups)}")
    cat = concat(groups, axis=0)
    inv = np.empty_like(part.order)
    inv[part.order] = np.arange(part.order.size)
    return reshape(permute_flat(cat, inv), (part.height, part.width))


class FgsAttnParams(Module):
    """Two n_rings -> n_rings 1x1 convolutions with a LeakyReLU between.

    The second layer starts at zero weight and unit bias, so a fresh module
    scales every ring by exactly 1.
    """

    def __init__(self, rng: np.random.Generator, n_rings: int, slope: float = 0.01):
        self.fc1 = Linear(rng, n_rings, n_rings)
        self.fc2 = Linear(rng, n_rings, n_rings, zero=True)
        self.fc2.bias = param(np.ones(n_rings))
        self.slope = slope
        self.n_rings = n_rings

    def __call__(self, desc: Tensor) -> Tensor:
        if desc.shape[-1] != self.n_rings:
            raise ValueError(f"descriptor length {desc.shape[-1]} != n_rings {self.n_rings}")
        x = reshape(desc, (1, self.n_rings))
        x = L.leaky_relu(self.fc1(x), self.slope)
        return reshape(self.fc2(x), (self.n_rings,))


def recalibrate(groups: list[Tensor], params: FgsAttnParams) -> tuple[list[Tensor], Tensor]:
    """Scale every ring by FC(per-ring mean). Returns (new groups, ring weights)."""
    if len(groups) != params.n_rings:
        raise ValueError(f"{len(groups)} rings but FC expects {params.n_rings}")
    desc = concat([reshape(g.mean(), (1,)) for g in groups], axis=0)
    weights = params(desc)
    return [g * weights[k] for k, g in enumerate(groups)], weights


def minmax(m: Tensor) -> Tensor:
    """Affine rescale to [0, 1]; a constant map becomes all zeros."""
    lo, hi = m.min(), m.max()
    if hi.item() - lo.item() == 0.0:
        return Tensor(np.zeros(m.shape))
    return (m - lo) / (hi - lo)


def fgsattn_forward(feat, params: FgsAttnParams, part: RingPartition,
                    trace: dict | None = None) -> tuple[Tensor, Tensor]:
    """Return (F_out [H, W, C], M [H, W, 1])."""
    feat = as_tensor(feat)
    if feat.ndim != 3:
        raise ValueError(f"expected [H, W, C] features, got {feat.shape}")
    h, w, _ = feat.shape
    plane = reshape(channel_pool(feat), (h, w))

    spectrum = F.fftshift(F.fft2(plane))
    amp, phase = F.amp_phase(spectrum)
    groups, weights = recalibrate(ring_group(amp, part), params)
    amp_new = ring_scatter(groups, part)
    spatial = F.ifft2(F.ifftshift(F.from_polar(amp_new, phase, centered=True)))
    attn = reshape(minmax(spatial), (h, w, 1))
    out = feat + attn * feat

    if trace is not None:
        trace.update(f_g=plane, amp=amp, phase=phase, amp_new=amp_new,
                     ring_weights=weights, spatial=spatial, attn=attn)
    return out, attn


class FGSAttn(Module):
    """FGSAttn bound to one map size. Maps with an extent below 2 pass through."""

    def __init__(self, rng: np.random.Generator, h: int, w: int, d: int = 1):
        self.h, self.w = h, w
        self.bypass = min(h, w) < 2
        if self.bypass:
            self.part = None
            self.params = None
            return
        self.d = d
        self.part = build_ring_partition(h, w, d)
        self.params = FgsAttnParams(rng, self.part.n_rings)

    def __call__(self, feat, trace: dict | None = None) -> tuple[Tensor, Tensor]:
        feat = as_tensor(feat)
        if feat.shape[:2] != (self.h, self.w):
            raise ValueError(f"FGSAttn built for {self.h}x{self.w}, got {feat.shape[:2]}")
        if self.bypass:
            attn = Tensor(np.zeros((self.h, self.w, 1)))
            if trace is not None:
                trace.update(attn=attn)
            return feat, attn
        return fgsattn_forward(feat, self.params, self.part, trace)


def fgsattn_tokens(tokens, grid: tuple[int, int], module: FGSAttn,
                   trace: dict | None = None) -> Tensor:
    """Apply FGSAttn to a [N, D] token sequence laid out on an (h, w) grid."""
    tokens = as_tensor(tokens)
    h, w = grid
    n, dim = tokens.shape
    if n != h * w:
        raise ValueError(f"{n} tokens do not fill a {h}x{w} grid")
    out, _ = module(reshape(tokens, (h, w, dim)), trace)
    return reshape(out, (n, dim))
