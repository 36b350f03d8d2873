"""Differentiable 2-D Fourier and single-level Haar wavelet transforms.

Fields are channel-last: ``(..., H, W, C)`` with any number of leading batch
axes. Both transforms act on the two spatial axes only.

Fourier conventions follow numpy's ``norm`` argument. ``"backward"`` (the
default) leaves the forward transform unscaled and divides the inverse by
``H*W``; ``"forward"`` puts the ``1/(H*W)`` on the forward side, which makes
the coefficients of a smooth field independent of grid resolution.

Haar subbands are named by (vertical, horizontal) filter: for a 2x2 block
``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2

so ``HL`` holds horizontal (along-row) detail and ``LH`` vertical detail.
The 4x4 mixing matrix is symmetric and orthogonal, which makes the inverse
transform the same matrix and the backward pass of each transform the
other transform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import tensor as T
from .errors import DimensionError, EvenDimensionError, SymmetryError
from .tensor import Tensor, make_node

_AXES = (-3, -2)
_DUAL_NORM = {"backward": "forward", "forward": "backward", "ortho": "ortho"}
SYMMETRY_TOL = 1e-8


def _check_field(x: Tensor, what: str) -> None:
    if x.ndim < 3:
        raise DimensionError(f"{what} expects a (..., H, W, C) field, got shape {x.shape}")
    if x.shape[-3] < 1 or x.shape[-2] < 1:
        raise DimensionError(f"{what}: empty spatial grid {x.shape}")


def _check_norm(norm: str) -> None:
    if norm not in _DUAL_NORM:
        raise ValueError(f"unknown FFT normalization {norm!r}")


@dataclass
class SpectralField:
    """Per-channel 2-D Fourier coefficients stored as real and imaginary parts.

    Mode ``(k1, k2)`` sits at index ``[..., k1, k2, c]`` with ``k1`` in
    ``[0, H)`` and ``k2`` in ``[0, W)`` (numpy's unshifted order).
    """

    real: Tensor
    imag: Tensor
    norm: str = "backward"

    def __post_init__(self):
        _check_norm(self.norm)
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"real part {self.real.shape} and imaginary part {self.imag.shape} differ"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def fft2_packed(x, norm: str = "backward") -> Tensor:
    """DFT of a real field with real and imaginary parts packed on the channel axis.

    ``(..., H, W, C) -> (..., H, W, 2C)`` laid out as ``[real | imag]``.
    """
    _check_norm(norm)
    x = T.as_tensor(x)
    _check_field(x, "fft2")
    coef = sfft.fft2(x.data, axes=_AXES, norm=norm)
    c = x.shape[-1]
    adjoint = _DUAL_NORM[norm]

    def backward(g):
        z = g[..., :c] + 1j * g[..., c:]
        return (sfft.ifft2(z, axes=_AXES, norm=adjoint).real,)

    return make_node(np.concatenate([coef.real, coef.imag], axis=-1), (x,), backward)


def ifft2_packed_real(z, norm: str = "backward") -> Tensor:
    """Real part of the inverse DFT of a ``[real | imag]`` packed spectrum."""
    _check_norm(norm)
    z = T.as_tensor(z)
    _check_field(z, "ifft2")
    if z.shape[-1] % 2:
        raise DimensionError(f"packed spectrum needs an even channel count, got {z.shape[-1]}")
    c = z.shape[-1] // 2
    out = sfft.ifft2(z.data[..., :c] + 1j * z.data[..., c:], axes=_AXES, norm=norm)

    def backward(g):
        w = sfft.ifft2(g, axes=_AXES, norm=norm)
        return (np.concatenate([w.real, -w.imag], axis=-1),)

    return make_node(np.ascontiguousarray(out.real), (z,), backward)


def fft2(x, norm: str = "backward") -> SpectralField:
    """Per-channel 2-D DFT of a real field."""
    re, im = T.split(fft2_packed(x, norm), 2, axis=-1)
    return SpectralField(re, im, norm)


def imag_residual(s: SpectralField) -> float:
    """Largest imaginary magnitude the inverse transform would discard."""
    out = sfft.ifft2(s.to_complex(), axes=_AXES, norm=s.norm)
    return float(np.max(np.abs(out.imag))) if out.size else 0.0


def ifft2(s: SpectralField, strict: bool = True) -> Tensor:
    """Inverse DFT returning the real part.

    With ``strict=True`` the spectrum must be Hermitian: an imaginary
    residual above ``1e-8`` (scaled by the output magnitude when that
    exceeds one) raises :class:`SymmetryError`. With ``strict=False`` the
    imaginary part is discarded; :func:`imag_residual` reports its size.
    """
    if s.real.ndim < 3:
        raise DimensionError(f"ifft2 expects (..., H, W, C) coefficients, got {s.shape}")
    out = ifft2_packed_real(T.concat([s.real, s.imag], axis=-1), s.norm)
    if strict and out.size:
        resid = imag_residual(s)
        scale = max(1.0, float(np.max(np.abs(out.data))))
        if resid > SYMMETRY_TOL * scale:
            raise SymmetryError(
                f"spectrum is not conjugate-symmetric: imaginary residual {resid:.3e}"
            )
    return out


# ---------------------------------------------------------------------------
# Haar
# ---------------------------------------------------------------------------

@dataclass
class WaveletSubbands:
    """One level of 2-D Haar coefficients, each ``(..., H/2, W/2, C)``."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {b.shape for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise DimensionError(f"inconsistent subband shapes {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ll.shape

    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh

    def stacked(self) -> Tensor:
        """Channel concatenation in the fixed order (LL, LH, HL, HH)."""
        return T.concat(self.bands(), axis=-1)

    @classmethod
    def from_stacked(cls, y) -> "WaveletSubbands":
        return cls(*T.split(y, 4, axis=-1))


def _haar_mix(a, b, c, d):
    return (
        0.5 * (a + b + c + d),
        0.5 * (a + b - c - d),
        0.5 * (a - b + c - d),
        0.5 * (a - b - c + d),
    )


def _analysis(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2, :]
    b = x[..., 0::2, 1::2, :]
    c = x[..., 1::2, 0::2, :]
    d = x[..., 1::2, 1::2, :]
    return np.concatenate(_haar_mix(a, b, c, d), axis=-1)


def _synthesis(y: np.ndarray) -> np.ndarray:
    ch = y.shape[-1] // 4
    bands = [y[..., i * ch:(i + 1) * ch] for i in range(4)]
    a, b, c, d = _haar_mix(*bands)
    h, w = y.shape[-3], y.shape[-2]
    out = np.empty(y.shape[:-3] + (2 * h, 2 * w, ch))
    out[..., 0::2, 0::2, :] = a
    out[..., 0::2, 1::2, :] = b
    out[..., 1::2, 0::2, :] = c
    out[..., 1::2, 1::2, :] = d
    return out


def haar_analysis(x) -> Tensor:
    """Single-level Haar FWT with subbands stacked on the channel axis.

    ``(..., H, W, C) -> (..., H/2, W/2, 4C)`` in the order (LL, LH, HL, HH).
    """
    x = T.as_tensor(x)
    _check_field(x, "fwt_haar")
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 or w % 2:
        raise EvenDimensionError(
            f"Haar transform needs even spatial dimensions, got {h}x{w}; resample or pad first"
        )
    return make_node(_analysis(x.data), (x,), lambda g: (_synthesis(g),))


def haar_synthesis(y) -> Tensor:
    """Inverse of :func:`haar_analysis`."""
    y = T.as_tensor(y)
    _check_field(y, "ifwt_haar")
    if y.shape[-1] % 4:
        raise DimensionError(
            f"stacked subbands need a channel count divisible by 4, got {y.shape[-1]}"
        )
    return make_node(_synthesis(y.data), (y,), lambda g: (_analysis(g),))


def fwt_haar(x) -> WaveletSubbands:
    return WaveletSubbands.from_stacked(haar_analysis(x))


def ifwt_haar(s: WaveletSubbands) -> Tensor:
    return haar_synthesis(s.stacked())
