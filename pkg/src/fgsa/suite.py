"""Finite-difference gradient checks for every op and composed module."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fft as F
from . import layers as L
from . import tensor as T
from .adapter import (FBFE, FBNM, AdapterConfig, ConvStem, CrossAttention, FeaturePyramid,
                      flatten_levels)
from .backbone import BackboneConfig, Block, PatchEmbed, TokenSequence
from .fgsattn import FGSAttn, fgsattn_tokens, minmax
from .gradcheck import grad_check
from .head import Decoder, weighted_bce_iou_loss
from .model import FGSANet
from .nn import Module
from .tensor import Tensor

TOLERANCE = 1e-4
DEFAULT_SEEDS = tuple(range(10))

MICRO_BACKBONE = BackboneConfig(image_size=32, patch_size=4, embed_dim=16, depth=2, heads=2,
                                group_count=2, layers_per_group=1, mlp_ratio=2)
MICRO_ADAPTER = AdapterConfig(D=16, d=1, heads=2, ffn_mult=2, stem_channels=4)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def randomize(module: Module, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Overwrite all parameters (including zero-initialized ones) with noise."""
    for p in module.parameters():
        p.data[...] = p.data + scale * rng.standard_normal(p.shape)


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _weighted_sum(out: Tensor, w: Tensor) -> Tensor:
    return (out * w).sum()


# -- op checks: each returns the max error for one seed ---------------------

def _unary(op: Callable, shape, positive: bool = False):
    def check(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape))
        w = _probe(rng, op(x).shape)
        return grad_check(lambda x: _weighted_sum(op(x), w), x)
    return check


def _binary(op: Callable, sa, sb, positive_b: bool = False):
    def check(seed):
        rng = np.random.default_rng(seed)
        a = _probe(rng, sa)
        b = Tensor(rng.uniform(0.5, 2.0, sb)) if positive_b else _probe(rng, sb)
        w = _probe(rng, op(a, b).shape)
        return grad_check(lambda a, b: _weighted_sum(op(a, b), w), [a, b])
    return check


def _params_check(build: Callable, n_elems: int | None = None):
    """``build(rng)`` -> (loss_fn(*tensors), tensors)."""
    def check(seed):
        rng = np.random.default_rng(seed)
        fn, tensors = build(rng)
        return grad_check(fn, tensors, max_elems=n_elems, seed=seed)
    return check


def _spectrum_check(fn: Callable):
    def check(seed):
        rng = np.random.default_rng(seed)
        x = _probe(rng, (6, 8))
        wr, wi = _probe(rng, (6, 8)), _probe(rng, (6, 8))

        def f(x):
            a, b = fn(x)
            return (a * wr).sum() + (b * wi).sum()
        return grad_check(f, x)
    return check


def _fgsattn_build(rng):
    m = FGSAttn(rng, 8, 8, 1)
    randomize(m, rng)
    x = _probe(rng, (8, 8, 4))
    w = _probe(rng, (8, 8, 4))
    return (lambda *ts: _weighted_sum(m(x)[0], w)), [x] + m.parameters()


def _fgsattn_tokens_build(rng):
    m = FGSAttn(rng, 4, 4, 1)
    randomize(m, rng)
    x = _probe(rng, (16, 6))
    w = _probe(rng, (16, 6))
    return (lambda *ts: _weighted_sum(fgsattn_tokens(x, (4, 4), m), w)), [x] + m.parameters()


def _stem_build(rng):
    m = ConvStem(rng, 4)
    x = Tensor(rng.uniform(size=(32, 32, 3)))
    w = _probe(rng, (8, 8, 4))
    return (lambda *ts: _weighted_sum(m(x), w)), [x] + m.parameters()


def _fbnm_pyramid_build(rng):
    m = FBNM(rng, MICRO_ADAPTER, 64, MICRO_ADAPTER.D)
    randomize(m, rng, 0.1)
    x = _probe(rng, (16, 16, MICRO_ADAPTER.stem_channels))
    ws = [None]

    def f(*ts):
        levels = m.pyramid(x).levels
        if ws[0] is None:
            ws[0] = [_probe(np.random.default_rng(1), lv.shape) for lv in levels]
        return sum(((lv * w).sum() for lv, w in zip(levels, ws[0])), Tensor(0.0))
    params = [p for st in m.stages for p in st.parameters()]
    return f, [x] + params


def _fbnm_project_build(rng):
    m = FBNM(rng, MICRO_ADAPTER, 64, MICRO_ADAPTER.D)
    levels = [_probe(rng, (8, 8, 8)), _probe(rng, (4, 4, 16)), _probe(rng, (2, 2, 16))]
    w = _probe(rng, (84, MICRO_ADAPTER.D))
    params = [p for pr in m.proj for p in pr.parameters()]
    return (lambda *ts: _weighted_sum(m.project_flatten(FeaturePyramid(levels)).flat, w)), levels + params


def _cross_attention_build(rng):
    m = CrossAttention(rng, 8, 2, zero_out=False)
    q, kv = _probe(rng, (4, 8)), _probe(rng, (6, 8))
    w = _probe(rng, (4, 8))
    return (lambda *ts: _weighted_sum(m(q, kv), w)), [q, kv] + m.parameters()


def _inject_build(rng):
    m = FBNM(rng, MICRO_ADAPTER, 32, MICRO_ADAPTER.D)
    randomize(m.inject, rng)
    tok = _probe(rng, (16, MICRO_ADAPTER.D))
    flat = _probe(rng, (21, MICRO_ADAPTER.D))
    w = _probe(rng, (16, MICRO_ADAPTER.D))
    pyr = FeaturePyramid([], flat=flat, shapes=[(4, 4), (2, 2), (1, 1)])

    def f(*ts):
        return _weighted_sum(m.inject_tokens(TokenSequence(tok, (4, 4)), pyr).tokens, w)
    return f, [tok, flat] + m.inject.parameters()


def _fbfe_build(is_last: bool):
    def build(rng):
        d = MICRO_ADAPTER.D
        m = FBFE(rng, MICRO_ADAPTER, (4, 4), is_last=is_last)
        randomize(m, rng, 0.2)
        tok = _probe(rng, (16, d))
        levels = [_probe(rng, (4, 4, d)), _probe(rng, (2, 2, d)), _probe(rng, (1, 1, d))]
        flat = Tensor(flatten_levels(levels).data)
        w_tok, w_ada = _probe(rng, (16, d)), _probe(rng, (21, d))

        def f(*ts):
            pyr = FeaturePyramid([], flat=flat, shapes=[(4, 4), (2, 2), (1, 1)])
            seq, new = m(TokenSequence(tok, (4, 4)), pyr)
            out = _weighted_sum(new.flat, w_ada)
            if seq is not None:
                out = out + _weighted_sum(seq.tokens, w_tok)
            return out
        return f, [tok, flat] + m.parameters()
    return build


def _block_build(rng):
    m = Block(rng, 8, 2, 2)
    x = _probe(rng, (6, 8))
    w = _probe(rng, (6, 8))
    return (lambda *ts: _weighted_sum(m(x), w)), [x] + m.parameters()


def _patch_embed_build(rng):
    cfg = BackboneConfig(image_size=16, patch_size=4, embed_dim=8, depth=1, heads=2,
                         group_count=1, layers_per_group=1)
    m = PatchEmbed(rng, cfg)
    x = Tensor(rng.uniform(size=(16, 16, 3)))
    w = _probe(rng, (16, 8))
    return (lambda *ts: _weighted_sum(m(x).tokens, w)), [x] + m.parameters()


def _decoder_build(rng):
    m = Decoder(rng, 8)
    levels = [_probe(rng, (4, 4, 8)), _probe(rng, (2, 2, 8)), _probe(rng, (1, 1, 8))]
    gt = (rng.uniform(size=(32, 32)) > 0.6).astype(float)

    def f(*ts):
        return weighted_bce_iou_loss(m(FeaturePyramid(levels), (32, 32)), gt)
    return f, levels + m.parameters()


def _loss_build(rng):
    logits = _probe(rng, (16, 16))
    yy, xx = np.mgrid[0:16, 0:16]
    gt = ((yy - 8) ** 2 + (xx - 7) ** 2 < 20).astype(float)
    return (lambda z: weighted_bce_iou_loss(L.sigmoid(z), gt)), [logits]


def _network_build(rng):
    model = FGSANet(MICRO_BACKBONE, MICRO_ADAPTER, seed=int(rng.integers(1 << 30)))
    randomize(model.adapter, rng, 0.1)
    randomize(model.head, rng, 0.1)
    image = Tensor(rng.uniform(size=(32, 32, 3)))
    yy, xx = np.mgrid[0:32, 0:32]
    gt = ((yy - 15) ** 2 + (xx - 17) ** 2 < 60).astype(float)
    trainable = model.trainable_set().trainable()
    names = sorted(trainable)
    pick = [trainable[names[i]] for i in rng.choice(len(names), size=10, replace=False)]
    return (lambda *ts: weighted_bce_iou_loss(model(image), gt)), [image] + pick


def _minmax_op(x):
    return minmax(x)


def _ln_build(rng):
    x = _probe(rng, (4, 6))
    g, b = Tensor(rng.uniform(0.5, 1.5, 6)), _probe(rng, (6,))
    w = _probe(rng, (4, 6))
    return (lambda x, g, b: _weighted_sum(L.layer_norm(x, g, b), w)), [x, g, b]


def _linear_build(rng):
    x, W, b = _probe(rng, (4, 3)), _probe(rng, (3, 5)), _probe(rng, (5,))
    w = _probe(rng, (4, 5))
    return (lambda x, W, b: _weighted_sum(L.linear(x, W, b), w)), [x, W, b]


def _conv_build(rng):
    x, W, b = _probe(rng, (7, 6, 3)), _probe(rng, (3, 3, 3, 4)), _probe(rng, (4,))
    w = _probe(rng, L.conv2d(x, W, b, stride=2, pad=1).shape)
    return (lambda x, W, b: _weighted_sum(L.conv2d(x, W, b, stride=2, pad=1), w)), [x, W, b]


def _dwconv_build(rng):
    x, W, b = _probe(rng, (6, 5, 3)), _probe(rng, (3, 3, 3)), _probe(rng, (3,))
    w = _probe(rng, (6, 5, 3))
    return (lambda x, W, b: _weighted_sum(L.depthwise_conv2d(x, W, b, pad=1), w)), [x, W, b]


CHECKS: dict[str, Callable[[int], float]] = {
    "add": _binary(T.add, (3, 4), (4,)),
    "mul": _binary(T.mul, (3, 4), (3, 1)),
    "div": _binary(T.div, (3, 4), (3, 4), positive_b=True),
    "matmul": _binary(T.matmul, (2, 3, 4), (4, 5)),
    "exp": _unary(T.exp, (3, 4)),
    "log": _unary(T.log, (3, 4), positive=True),
    "sqrt": _unary(T.sqrt, (3, 4), positive=True),
    "sum/mean": _unary(lambda x: x.sum(axis=0) + x.mean(axis=1, keepdims=True), (3, 4)),
    "max/min": _unary(lambda x: x.max(axis=-1) * x.min(axis=0)[:3], (3, 4)),
    "reshape/transpose/concat": _unary(
        lambda x: T.concat([x.reshape(4, 3).T, x[1:2, :]], axis=0), (3, 4)),
    "softmax": _unary(lambda x: L.softmax(x, axis=-1), (3, 5)),
    "gelu": _unary(L.gelu, (3, 5)),
    "leaky_relu": _unary(lambda x: L.leaky_relu(x, 0.01), (3, 5)),
    "sigmoid": _unary(L.sigmoid, (3, 5)),
    "layer_norm": _params_check(_ln_build),
    "linear": _params_check(_linear_build),
    "conv2d": _params_check(_conv_build),
    "depthwise_conv2d": _params_check(_dwconv_build),
    "maxpool2d": _unary(lambda x: L.maxpool2d(x, 3, 2, 1), (7, 6, 2)),
    "channel/global pool": _unary(
        lambda x: L.channel_avg_pool(x) + L.channel_max_pool(x) + L.global_avg_pool(x), (4, 5, 3)),
    "bilinear_resize": _unary(lambda x: L.bilinear_resize(x, 7, 9), (3, 4, 2)),
    "fft2": _spectrum_check(lambda x: (F.fft2(x).real, F.fft2(x).imag)),
    "ifft2": _spectrum_check(
        lambda x: (F.ifft2(F.ComplexSpectrum(x, x * x)), F.ifft2_complex(F.ComplexSpectrum(x, x)).imag)),
    "fftshift": _spectrum_check(lambda x: (F.fftshift(F.fft2(x)).real, F.ifftshift(F.fft2(x)).imag)),
    # imag > 0 keeps the probe off the phase branch cut
    "amp_phase": _spectrum_check(lambda x: F.amp_phase(F.ComplexSpectrum(x, x * x + 0.5))),
    "fft2 amplitude": _spectrum_check(lambda x: (F.amp_phase(F.fft2(x))[0], x)),
    "from_polar": _spectrum_check(lambda x: (lambda s: (s.real, s.imag))(F.from_polar(x * x, x))),
    "minmax": _unary(_minmax_op, (5, 6)),
    "fgsattn": _params_check(_fgsattn_build),
    "fgsattn_tokens": _params_check(_fgsattn_tokens_build),
    "transformer_block": _params_check(_block_build, 12),
    "patch_embed": _params_check(_patch_embed_build, 24),
    "conv_stem": _params_check(_stem_build, 16),
    "fbnm_pyramid": _params_check(_fbnm_pyramid_build, 8),
    "fbnm_project_flatten": _params_check(_fbnm_project_build, 16),
    "cross_attention": _params_check(_cross_attention_build),
    "fbnm_inject": _params_check(_inject_build, 16),
    "fbfe_step": _params_check(_fbfe_build(False), 6),
    "fbfe_step_last": _params_check(_fbfe_build(True), 6),
    "decoder+loss": _params_check(_decoder_build, 12),
    "weighted_bce_iou_loss": _params_check(_loss_build),
    "network+loss (micro)": _params_check(_network_build, 4),
}


def run_suite(seeds=DEFAULT_SEEDS, names=None) -> list[CheckResult]:
    out = []
    for name, check in CHECKS.items():
        if names is not None and name not in names:
            continue
        worst = max(check(int(s)) for s in seeds)
        out.append(CheckResult(name, worst, len(seeds)))
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  max_rel_error  seeds  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {r.seeds:5d}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
