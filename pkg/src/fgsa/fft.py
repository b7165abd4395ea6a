"""Differentiable unitary 2-D DFT on real/imaginary tensor pairs.

The transform is backed by ``numpy.fft`` with ``norm="ortho"`` so the
forward carries the 1/sqrt(HW) factor and the inverse is its adjoint.
Because the map is complex-linear and unitary, the backward pass of the
forward transform is the inverse transform of the incoming gradient pair,
and vice versa.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, make_op

# amplitude floor used only inside the polar-decomposition backward
AMP_FLOOR = 1e-12
# largest imaginary residue tolerated when an inverse is declared real
IMAG_RESIDUE_TOL = 1e-10


@dataclass(frozen=True)
class ComplexSpectrum:
    real: Tensor
    imag: Tensor
    centered: bool = False

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real {self.real.shape} and imag {self.imag.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def _check_plane(shape):
    if len(shape) != 2:
        raise ValueError(f"expected a 2-D plane, got shape {shape}")
    if shape[0] < 2 or shape[1] < 2:
        raise ValueError(f"spatial extents must be >= 2, got {shape}")


def _dft_pair(re: Tensor, im: Tensor | None, inverse: bool) -> tuple[Tensor, Tensor]:
    fwd = np.fft.ifft2 if inverse else np.fft.fft2
    adj = np.fft.fft2 if inverse else np.fft.ifft2
    z = re.data if im is None else re.data + 1j * im.data
    out = fwd(z, norm="ortho")
    parents = (re,) if im is None else (re, im)

    def backward_re(g):
        gz = adj(g, norm="ortho")
        return (gz.real,) if im is None else (gz.real, gz.imag)

    def backward_im(g):
        gz = adj(1j * g, norm="ortho")
        return (gz.real,) if im is None else (gz.real, gz.imag)

    return (make_op(np.ascontiguousarray(out.real), parents, backward_re),
            make_op(np.ascontiguousarray(out.imag), parents, backward_im))


def fft2(x) -> ComplexSpectrum:
    """Unitary forward transform of a real [H, W] plane."""
    x = as_tensor(x)
    _check_plane(x.shape)
    if not np.all(np.isfinite(x.data)):
        raise ValueError("fft2 input contains non-finite values")
    re, im = _dft_pair(x, None, inverse=False)
    return ComplexSpectrum(re, im, centered=False)


def ifft2_complex(s: ComplexSpectrum) -> ComplexSpectrum:
    """Unitary inverse transform keeping both output halves."""
    _check_plane(s.shape)
    re, im = _dft_pair(s.real, s.imag, inverse=True)
    return ComplexSpectrum(re, im, centered=False)


def ifft2(s: ComplexSpectrum, check_real: bool = False) -> Tensor:
    """Unitary inverse transform returning the real part.

    With ``check_real`` the imaginary residue must stay below
    ``IMAG_RESIDUE_TOL`` (true for conjugate-symmetric spectra).
    """
    _check_plane(s.shape)
    z = s.real.data + 1j * s.imag.data
    out = np.fft.ifft2(z, norm="ortho")
    if check_real:
        resid = float(np.abs(out.imag).max())
        if resid > IMAG_RESIDUE_TOL:
            raise ValueError(f"inverse is not real: imaginary residue {resid:.3e}")

    def backward(g):
        gz = np.fft.fft2(g, norm="ortho")
        return gz.real, gz.imag

    return make_op(np.ascontiguousarray(out.real), (s.real, s.imag), backward)


def _roll2(x: Tensor, sh: tuple[int, int]) -> Tensor:
    back = (-sh[0], -sh[1])
    return make_op(np.roll(x.data, sh, axis=(0, 1)), (x,),
                   lambda g: (np.roll(g, back, axis=(0, 1)),))


def fftshift(s: ComplexSpectrum) -> ComplexSpectrum:
    """Move the zero-frequency bin to (H // 2, W // 2)."""
    h, w = s.shape
    sh = (h // 2, w // 2)
    return ComplexSpectrum(_roll2(s.real, sh), _roll2(s.imag, sh), centered=True)


def ifftshift(s: ComplexSpectrum) -> ComplexSpectrum:
    """Undo ``fftshift`` (also for odd extents)."""
    h, w = s.shape
    sh = (-(h // 2), -(w // 2))
    return ComplexSpectrum(_roll2(s.real, sh), _roll2(s.imag, sh), centered=False)


def amp_phase(s: ComplexSpectrum) -> tuple[Tensor, Tensor]:
    """Polar decomposition; the phase of an exactly-zero bin is 0."""
    re, im = s.real, s.imag
    amp = np.hypot(re.data, im.data)
    phase = np.where(amp == 0.0, 0.0, np.arctan2(im.data, re.data))
    a = np.maximum(amp, AMP_FLOOR)

    def backward_amp(g):
        return g * re.data / a, g * im.data / a

    def backward_phase(g):
        a2 = a * a
        return -g * im.data / a2, g * re.data / a2

    return (make_op(amp, (re, im), backward_amp),
            make_op(phase, (re, im), backward_phase))


def from_polar(amp, phase, centered: bool = False) -> ComplexSpectrum:
    """Rebuild (amp cos phase, amp sin phase)."""
    amp, phase = as_tensor(amp), as_tensor(phase)
    c, s = np.cos(phase.data), np.sin(phase.data)

    def backward_re(g):
        return g * c, -g * amp.data * s

    def backward_im(g):
        return g * s, g * amp.data * c

    return ComplexSpectrum(make_op(amp.data * c, (amp, phase), backward_re),
                           make_op(amp.data * s, (amp, phase), backward_im),
                           centered=centered)
