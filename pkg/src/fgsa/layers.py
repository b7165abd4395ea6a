"""Differentiable layer primitives on channel-last feature maps.

Spatial maps are ``[H, W, C]``; token sequences are ``[N, D]``. There is no
batch axis: batches are formed by accumulating gradients over samples.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_op, unbroadcast

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# -- activations -------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # two-branch form avoids overflow in exp
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data ** 2)
    return make_op(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return make_op(x.data * scale, (x,), lambda g: (g * scale,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (x,), backward)


# -- dense layers ------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as [in, out]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = unbroadcast(g, beta.shape)
        return gx, gg, gb

    return make_op(out, (x, gamma, beta), backward)


# -- convolutions and pooling ------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride={stride} / pad={pad}")
    m = (n + 2 * pad - k) // stride + 1
    if m < 1:
        raise ValueError(f"kernel {k} does not fit extent {n} with pad {pad}")
    return m


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [Ho, Wo, C, kh, kw] view
    return sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]


def _scatter_windows(dwin: np.ndarray, padded_shape, stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: dwin is [Ho, Wo, C, kh, kw]."""
    ho, wo, _, kh, kw = dwin.shape
    dxp = np.zeros(padded_shape)
    for a in range(kh):
        for b in range(kw):
            dxp[a:a + stride * (ho - 1) + 1:stride,
                b:b + stride * (wo - 1) + 1:stride, :] += dwin[:, :, :, a, b]
    return dxp


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [H, W, Cin] with ``weight`` [kh, kw, Cin, Cout]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError("conv2d expects x [H,W,C] and weight [kh,kw,Cin,Cout]")
    h, w, cin = x.shape
    kh, kw, wc, cout = weight.shape
    if wc != cin:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {wc}")
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    cols = _windows(xp, kh, kw, stride).reshape(ho * wo, cin * kh * kw)
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ wmat).reshape(ho, wo, cout)

    def backward(g):
        g2 = g.reshape(ho * wo, cout)
        gx = gw = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(ho, wo, cin, kh, kw)
            dxp = _scatter_windows(dcols, xp.shape, stride)
            gx = dxp[pad:pad + h, pad:pad + w, :]
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        return gx, gw

    y = make_op(out, (x, weight), backward)
    if bias is not None:
        y = y + bias
    return y


def depthwise_conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel convolution; ``weight`` is [kh, kw, C]."""
    x, weight = as_tensor(x), as_tensor(weight)
    h, w, c = x.shape
    kh, kw, wc = weight.shape
    if wc != c:
        raise ValueError(f"depthwise_conv2d: {c} channels vs weight {wc}")
    _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)  # validates extents
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    win = _windows(xp, kh, kw, stride)
    out = np.einsum("ijcab,abc->ijc", win, weight.data)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            dwin = np.einsum("ijc,abc->ijcab", g, weight.data)
            gx = _scatter_windows(dwin, xp.shape, stride)[pad:pad + h, pad:pad + w, :]
        if weight.requires_grad:
            gw = np.einsum("ijcab,ijc->abc", win, g)
        return gx, gw

    y = make_op(out, (x, weight), backward)
    if bias is not None:
        y = y + bias
    return y


def maxpool2d(x, kernel: int, stride: int | None = None, pad: int = 0) -> Tensor:
    """Spatial max pooling; ties send the gradient to the first maximum in scan order."""
    x = as_tensor(x)
    stride = kernel if stride is None else stride
    h, w, c = x.shape
    ho, wo = _out_size(h, kernel, stride, pad), _out_size(w, kernel, stride, pad)
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf)
    win = _windows(xp, kernel, kernel, stride).reshape(ho, wo, c, kernel * kernel)
    k = win.argmax(axis=-1)
    out = np.take_along_axis(win, k[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros((ho, wo, c, kernel * kernel))
        np.put_along_axis(dwin, k[..., None], g[..., None], axis=-1)
        dwin = dwin.reshape(ho, wo, c, kernel, kernel)
        return (_scatter_windows(dwin, xp.shape, stride)[pad:pad + h, pad:pad + w, :],)

    return make_op(out, (x,), backward)


def avg_pool2d(x, kernel: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Mean pooling with zero padding counted in the denominator."""
    x = as_tensor(x)
    c = x.shape[2]
    w = np.full((kernel, kernel, c), 1.0 / (kernel * kernel))
    return depthwise_conv2d(x, Tensor(w), stride=stride, pad=pad)


def channel_avg_pool(x) -> Tensor:
    """[H, W, C] -> [H, W, 1] mean over channels."""
    return as_tensor(x).mean(axis=-1, keepdims=True)


def channel_max_pool(x) -> Tensor:
    """[H, W, C] -> [H, W, 1] max over channels."""
    return as_tensor(x).max(axis=-1, keepdims=True)


def global_avg_pool(x) -> Tensor:
    """[H, W, C] -> [C]."""
    return as_tensor(x).mean(axis=(0, 1))


# -- resampling --------------------------------------------------------------

def _bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel centers, edge clamped (align_corners=False)
    r = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        r[i, i0] += 1.0 - frac
        r[i, i1] += frac
    return r


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize [H, W, C] to [out_h, out_w, C]."""
    x = as_tensor(x)
    h, w, _ = x.shape
    ry, rx = _bilinear_matrix(out_h, h), _bilinear_matrix(out_w, w)
    out = np.einsum("ih,jw,hwc->ijc", ry, rx, x.data)
    return make_op(out, (x,), lambda g: (np.einsum("ih,jw,ijc->hwc", ry, rx, g),))
