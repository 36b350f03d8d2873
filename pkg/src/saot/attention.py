"""Token mixers: linearized, Fourier and Wavelet attention plus gated fusion.

All mixers take channel-last grid features ``(..., H, W, D)`` and return
the same shape. Attention inside the Wavelet branch is single-head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import tensor as T
from .errors import ConfigurationError, DimensionError, EvenDimensionError, NumericError
from .nn import LinearParams, ParameterStore, complex_block_linear, conv3x3_same
from .spectral import (
    SpectralField,
    fft2_packed,
    haar_analysis,
    haar_synthesis,
    ifft2_packed_real,
)
from .tensor import Tensor

FA_ACTIVATIONS = ("modulus", "split", "identity")


# ---------------------------------------------------------------------------
# projections and attention kernels
# ---------------------------------------------------------------------------

@dataclass
class QKVProjection:
    wq: Tensor
    wk: Tensor
    wv: Tensor

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int):
        return cls(
            store.uniform(f"{prefix}.wq", (width, width), fan_in=width),
            store.uniform(f"{prefix}.wk", (width, width), fan_in=width),
            store.uniform(f"{prefix}.wv", (width, width), fan_in=width),
        )

    @property
    def width(self) -> int:
        return self.wq.shape[0]


def project_qkv(x, p: QKVProjection) -> tuple[Tensor, Tensor, Tensor]:
    """Bias-free query, key and value projections of token rows."""
    x = T.as_tensor(x)
    for w in (p.wq, p.wk, p.wv):
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"projection matrices must be square, got {w.shape}")
    if x.shape[-1] != p.width:
        raise DimensionError(
            f"token width {x.shape[-1]} does not match projection width {p.width}"
        )
    return T.linear(x, p.wq), T.linear(x, p.wk), T.linear(x, p.wv)


def softmax_attention_reference(q, k, v, tau: float | None = None) -> np.ndarray:
    """Quadratic-cost softmax attention, for testing only.

    ``tau`` defaults to ``sqrt(D)``. Rows are max-shifted before
    exponentiation.
    """
    q, k, v = (np.asarray(T.as_tensor(a).data) for a in (q, k, v))
    if tau is None:
        tau = float(np.sqrt(q.shape[-1]))
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    with np.errstate(over="ignore", invalid="ignore"):
        logits = q @ np.swapaxes(k, -1, -2) / tau
        logits = logits - logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits)
        out = (weights @ v) / weights.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(out)):
        raise NumericError("softmax attention overflowed despite max-subtraction")
    return out


def elu_feature_map(x) -> Tensor:
    return T.elu(x) + 1.0


def _phi(x: np.ndarray) -> np.ndarray:
    # elu(x) + 1 == exp(min(x, 0)) + max(x, 0), built with two temporaries
    out = np.minimum(x, 0.0)
    np.exp(out, out=out)
    out += np.maximum(x, 0.0)
    return out


# Tokens are processed in row chunks so each working set stays cache resident
# and time grows linearly in n past the cache size.
ATTENTION_CHUNK = 512


def _chunks(n: int):
    for lo in range(0, n, ATTENTION_CHUNK):
        yield slice(lo, min(lo + ATTENTION_CHUNK, n))


def _t(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def linear_attention(q, k, v, eps: float = 1e-6) -> Tensor:
    """Kernelized attention with feature map ``elu(x) + 1``.

    The key-value outer-product sum and the key sum are formed once and
    shared by all queries, so the cost is linear in the token count. The
    op is fused with a hand-written backward that recomputes feature maps
    chunk by chunk instead of storing them.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"linear_attention shapes: Q {q.shape}, K {k.shape}, V {v.shape}")
    qd, kd, vd = q.data, k.data, v.data
    lead = kd.shape[:-2]
    kv = np.zeros(lead + (kd.shape[-1], vd.shape[-1]))       # (..., D, Dv)
    k_sum = np.zeros(lead + (1, kd.shape[-1]))                # (..., 1, D)
    for c in _chunks(kd.shape[-2]):
        phi_k = _phi(kd[..., c, :])
        kv += _t(phi_k) @ vd[..., c, :]
        k_sum += phi_k.sum(axis=-2, keepdims=True)
    out = np.empty(qd.shape[:-1] + (vd.shape[-1],))
    den = np.empty(qd.shape[:-1] + (1,))
    for c in _chunks(qd.shape[-2]):
        phi_q = _phi(qd[..., c, :])
        den[..., c, :] = phi_q @ _t(k_sum) + eps
        np.divide(phi_q @ kv, den[..., c, :], out=out[..., c, :])

    def backward(g):
        g_q = np.empty_like(qd)
        g_kv = np.zeros_like(kv)
        g_ksum = np.zeros_like(k_sum)
        for c in _chunks(qd.shape[-2]):
            phi_q = _phi(qd[..., c, :])
            g_num = g[..., c, :] / den[..., c, :]
            g_den = -np.sum(g_num * out[..., c, :], axis=-1, keepdims=True)
            g_phi = g_num @ _t(kv)
            g_phi += g_den * k_sum
            # d phi / dx is 1 for x > 0 and exp(x) = phi otherwise
            g_q[..., c, :] = g_phi * np.minimum(phi_q, 1.0)
            g_kv += _t(phi_q) @ g_num
            g_ksum += _t(g_den) @ phi_q
        g_k = np.empty_like(kd)
        g_v = np.empty_like(vd)
        for c in _chunks(kd.shape[-2]):
            phi_k = _phi(kd[..., c, :])
            g_phi = vd[..., c, :] @ _t(g_kv)
            g_phi += g_ksum
            g_k[..., c, :] = g_phi * np.minimum(phi_k, 1.0)
            g_v[..., c, :] = phi_k @ g_kv
        return g_q, g_k, g_v

    return T.make_node(out, (q, k, v), backward)


# ---------------------------------------------------------------------------
# Fourier attention
# ---------------------------------------------------------------------------

@dataclass
class FourierAttentionParams:
    """Block-diagonal two-layer complex MLP shared by every Fourier mode.

    Weights are stored as real/imaginary pairs of shape ``(k, b, m)`` and
    ``(k, m, b)`` where ``b = D / k`` and ``m = hidden_ratio * b``.
    """

    w1_real: Tensor
    w1_imag: Tensor
    w2_real: Tensor
    w2_imag: Tensor
    gate_bias: Tensor | None
    blocks: int
    activation: str = "modulus"
    norm: str = "forward"

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int, blocks: int = 4,
             hidden_ratio: int = 1, activation: str = "modulus", norm: str = "forward"):
        if blocks < 1 or width % blocks:
            raise ConfigurationError(f"FA block count {blocks} must divide width {width}")
        if activation not in FA_ACTIVATIONS:
            raise ConfigurationError(f"FA activation must be one of {FA_ACTIVATIONS}")
        b = width // blocks
        m = int(hidden_ratio * b)
        if m < 1:
            raise ConfigurationError(f"FA hidden width must be positive, got {m}")
        return cls(
            store.uniform(f"{prefix}.w1_real", (blocks, b, m), fan_in=b),
            store.uniform(f"{prefix}.w1_imag", (blocks, b, m), fan_in=b),
            store.uniform(f"{prefix}.w2_real", (blocks, m, b), fan_in=m),
            store.uniform(f"{prefix}.w2_imag", (blocks, m, b), fan_in=m),
            store.zeros(f"{prefix}.gate_bias", (blocks * m,)) if activation == "modulus" else None,
            blocks,
            activation,
            norm,
        )

    @property
    def width(self) -> int:
        return self.blocks * self.w1_real.shape[1]


def modulus_gate(z, bias) -> Tensor:
    """``w * sigmoid(|w|^2 + b)`` on a ``[real | imag]`` packed axis.

    Only the modulus is rescaled, so the gate commutes with the phase
    factors a circular shift applies to every Fourier mode.
    """
    z, bias = T.as_tensor(z), T.as_tensor(bias)
    n = z.shape[-1] // 2
    if z.shape[-1] != 2 * n or bias.shape != (n,):
        raise DimensionError(f"modulus_gate: packed width {z.shape[-1]} vs bias {bias.shape}")
    re, im = z.data[..., :n], z.data[..., n:]
    gate = expit(re * re + im * im + bias.data)
    out = np.concatenate([re * gate, im * gate], axis=-1)

    def backward(g):
        gr, gi = g[..., :n], g[..., n:]
        t = (gr * re + gi * im) * gate * (1.0 - gate)
        gz = np.concatenate([gr * gate + 2.0 * re * t, gi * gate + 2.0 * im * t], axis=-1)
        return gz, t.reshape(-1, n).sum(axis=0)

    return T.make_node(out, (z, bias), backward)


def _packed_activation(z, p: FourierAttentionParams):
    if p.activation == "identity":
        return z
    if p.activation == "split":
        return T.gelu(z)
    return modulus_gate(z, p.gate_bias)


def _packed_mlp(z, p: FourierAttentionParams) -> Tensor:
    z = complex_block_linear(z, p.w1_real, p.w1_imag)
    z = _packed_activation(z, p)
    return complex_block_linear(z, p.w2_real, p.w2_imag)


def fourier_mlp(s: SpectralField, p: FourierAttentionParams) -> SpectralField:
    """Apply the mode-wise block MLP to every Fourier coefficient."""
    if s.shape[-1] != p.width:
        raise DimensionError(f"spectrum width {s.shape[-1]} != FA width {p.width}")
    z = _packed_mlp(T.concat([s.real, s.imag], axis=-1), p)
    re, im = T.split(z, 2, axis=-1)
    return SpectralField(re, im, s.norm)


def fourier_attention(x, p: FourierAttentionParams) -> Tensor:
    """Global convolution in Fourier space plus a residual: ``X + Re(F^-1 R F X)``.

    All modes are kept. The MLP output need not be Hermitian, so the real
    part of the inverse transform is taken without a symmetry check.
    """
    x = T.as_tensor(x)
    if x.ndim < 3 or x.shape[-1] != p.width:
        raise DimensionError(f"FA expects (..., H, W, {p.width}) input, got {x.shape}")
    z = _packed_mlp(fft2_packed(x, norm=p.norm), p)
    return x + ifft2_packed_real(z, norm=p.norm)


# ---------------------------------------------------------------------------
# Wavelet attention
# ---------------------------------------------------------------------------

@dataclass
class WaveletAttentionParams:
    reduce: LinearParams
    conv_kernel: Tensor | None
    conv_bias: Tensor | None
    qkv: QKVProjection
    out: LinearParams
    eps: float = 1e-6

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int,
             use_locality_conv: bool = True, eps: float = 1e-6):
        if width < 4 or width % 4:
            raise ConfigurationError(f"wavelet attention width must be divisible by 4, got {width}")
        quarter = width // 4
        reduce = LinearParams.init(store, f"{prefix}.reduce", width, quarter)
        kernel = bias = None
        if use_locality_conv:
            kernel = store.uniform(f"{prefix}.conv.kernel", (3, 3, width, width), fan_in=9 * width)
            bias = store.zeros(f"{prefix}.conv.bias", (width,))
        qkv = QKVProjection.init(store, f"{prefix}.qkv", width)
        out = LinearParams.init(store, f"{prefix}.out", width + quarter, width)
        return cls(reduce, kernel, bias, qkv, out, eps)

    @property
    def width(self) -> int:
        return self.qkv.width

    @property
    def use_locality_conv(self) -> bool:
        return self.conv_kernel is not None


def wavelet_tokens(x, p: WaveletAttentionParams) -> Tensor:
    """Channel-reduce, Haar-transform and optionally convolve: ``(..., H/2, W/2, D)``."""
    x = T.as_tensor(x)
    if x.shape[-3] % 2 or x.shape[-2] % 2:
        raise EvenDimensionError(
            f"wavelet attention needs even spatial dimensions, got {x.shape[-3]}x{x.shape[-2]}"
        )
    stacked = haar_analysis(p.reduce(x))
    if p.use_locality_conv:
        stacked = conv3x3_same(stacked, p.conv_kernel, p.conv_bias)
    return stacked


def wavelet_attention(x, p: WaveletAttentionParams) -> Tensor:
    """Linear attention between Haar subband tokens, then reconstruct and project."""
    x = T.as_tensor(x)
    if x.shape[-1] != p.width:
        raise DimensionError(f"input width {x.shape[-1]} != WA width {p.width}")
    xw = wavelet_tokens(x, p)
    h2, w2, d = xw.shape[-3:]
    lead = xw.shape[:-3]
    tokens = T.reshape(xw, lead + (h2 * w2, d))
    q, k, v = project_qkv(tokens, p.qkv)
    mixed = T.reshape(linear_attention(q, k, v, p.eps), lead + (h2, w2, d))
    recon = haar_synthesis(mixed)
    return p.out(T.concat([x, recon], axis=-1))


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

@dataclass
class GatedFusionParams:
    gate: LinearParams

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int):
        return cls(LinearParams.init(store, f"{prefix}.gate", 2 * width, width))


def gate_map(x_fa, x_wa, p: GatedFusionParams) -> Tensor:
    x_fa, x_wa = T.as_tensor(x_fa), T.as_tensor(x_wa)
    if x_fa.shape != x_wa.shape:
        raise DimensionError(f"fusion inputs differ in shape: {x_fa.shape} vs {x_wa.shape}")
    if p.gate.weight.shape[0] != 2 * x_fa.shape[-1]:
        raise DimensionError(
            f"gate expects width {p.gate.weight.shape[0] // 2}, got {x_fa.shape[-1]}"
        )
    return T.sigmoid(p.gate(T.concat([x_fa, x_wa], axis=-1)))


def gated_fusion(x_fa, x_wa, p: GatedFusionParams) -> Tensor:
    """Elementwise convex combination ``G * X_FA + (1 - G) * X_WA``."""
    g = gate_map(x_fa, x_wa, p)
    return g * x_fa + (1.0 - g) * x_wa


@dataclass
class SpectralAttentionParams:
    fa: FourierAttentionParams
    wa: WaveletAttentionParams
    fusion: GatedFusionParams


def spectral_attention(x, p: SpectralAttentionParams) -> Tensor:
    """Parallel Fourier and Wavelet branches on the same input, gate-fused."""
    x = T.as_tensor(x)
    return gated_fusion(fourier_attention(x, p.fa), wavelet_attention(x, p.wa), p.fusion)
