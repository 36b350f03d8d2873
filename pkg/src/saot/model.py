"""Encoder-processor-decoder operator network and its relative L2 loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .attention import (
    FA_ACTIVATIONS,
    FourierAttentionParams,
    GatedFusionParams,
    SpectralAttentionParams,
    WaveletAttentionParams,
    fourier_attention,
    spectral_attention,
    wavelet_attention,
)
from .errors import ConfigurationError, DimensionError, EvenDimensionError, MetricError
from .nn import LayerNormParams, LinearParams, MLPParams, ParameterStore, mlp_forward
from .tensor import Tensor, make_node

VARIANTS = ("fa", "wa", "sa")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; serialized into every checkpoint."""

    n_layers: int = 4
    width: int = 64
    in_channels: int = 1
    out_channels: int = 1
    mlp_ratio: int = 1
    fa_blocks: int = 4
    fa_hidden_ratio: int = 1
    fa_activation: str = "modulus"
    fa_norm: str = "forward"
    use_locality_conv: bool = True
    variant: str = "sa"
    activation: str = "gelu"
    ln_eps: float = 1e-5
    attn_eps: float = 1e-6
    input_shift: float = 0.0
    input_scale: float = 1.0
    output_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("n_layers", "width", "in_channels", "out_channels", "mlp_ratio",
                     "fa_blocks", "fa_hidden_ratio"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.variant in ("wa", "sa") and self.width % 4:
            raise ConfigurationError(
                f"width must be divisible by 4 for variant {self.variant!r}, got {self.width}"
            )
        if self.variant in ("fa", "sa") and self.width % self.fa_blocks:
            raise ConfigurationError(
                f"fa_blocks={self.fa_blocks} must divide width={self.width}"
            )
        if self.fa_activation not in FA_ACTIVATIONS:
            raise ConfigurationError(f"fa_activation must be one of {FA_ACTIVATIONS}")
        T.activation(self.activation)
        if not (self.input_scale > 0 and self.output_scale > 0):
            raise ConfigurationError("input_scale and output_scale must be positive")

    @property
    def uses_wavelets(self) -> bool:
        return self.variant in ("wa", "sa")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def grid_coordinates(h: int, w: int) -> np.ndarray:
    """Endpoint-aligned ``(row, column)`` coordinates in ``[0, 1]``, shape ``(h, w, 2)``."""
    rows = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    cols = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr, cc], axis=-1)


@dataclass
class BlockParams:
    ln1: LayerNormParams
    mixer: object
    ln2: LayerNormParams
    mlp: MLPParams


class SAOTModel:
    """Parameters and forward pass of the spectral attention operator network.

    The network has no resolution-dependent parameters, so one parameter
    set accepts any grid (even-sized when the Wavelet branch is active).
    """

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        store = ParameterStore(config.seed)
        self.params = store
        c = config
        self.encoder = LinearParams.init(store, "encoder", c.in_channels + 2, c.width)
        self.blocks: list[BlockParams] = []
        for i in range(c.n_layers):
            prefix = f"blocks.{i}"
            ln1 = LayerNormParams.init(store, f"{prefix}.ln1", c.width, c.ln_eps)
            mixer = self._init_mixer(store, f"{prefix}.mixer")
            ln2 = LayerNormParams.init(store, f"{prefix}.ln2", c.width, c.ln_eps)
            mlp = MLPParams.init(store, f"{prefix}.mlp", c.width, c.mlp_ratio, c.activation)
            self.blocks.append(BlockParams(ln1, mixer, ln2, mlp))
        self.decoder = LinearParams.init(store, "decoder", c.width, c.out_channels)

    def _init_mixer(self, store, prefix):
        c = self.config
        fa = wa = None
        if c.variant in ("fa", "sa"):
            fa = FourierAttentionParams.init(
                store, f"{prefix}.fa", c.width, c.fa_blocks, c.fa_hidden_ratio,
                c.fa_activation, c.fa_norm,
            )
        if c.variant in ("wa", "sa"):
            wa = WaveletAttentionParams.init(
                store, f"{prefix}.wa", c.width, c.use_locality_conv, c.attn_eps
            )
        if c.variant == "fa":
            return fa
        if c.variant == "wa":
            return wa
        return SpectralAttentionParams(fa, wa, GatedFusionParams.init(store, f"{prefix}.fusion", c.width))

    # -- pieces ---------------------------------------------------------
    def check_input(self, a: Tensor) -> None:
        if a.ndim < 3:
            raise DimensionError(f"expected (..., H, W, C) input, got shape {a.shape}")
        if a.shape[-1] != self.config.in_channels:
            raise ConfigurationError(
                f"input has {a.shape[-1]} channels, model expects {self.config.in_channels}"
            )
        h, w = a.shape[-3], a.shape[-2]
        if self.config.uses_wavelets and (h % 2 or w % 2):
            raise EvenDimensionError(
                f"variant {self.config.variant!r} needs even grid dimensions, got {h}x{w}"
            )

    def encode(self, a) -> Tensor:
        """Append grid coordinates and lift pointwise to the hidden width."""
        a = T.as_tensor(a)
        if a.shape[-1] != self.config.in_channels:
            raise ConfigurationError(
                f"input has {a.shape[-1]} channels, model expects {self.config.in_channels}"
            )
        c = self.config
        if c.input_shift != 0.0 or c.input_scale != 1.0:
            a = (a - c.input_shift) * (1.0 / c.input_scale)
        coords = grid_coordinates(a.shape[-3], a.shape[-2])
        coords = np.broadcast_to(coords, a.shape[:-1] + (2,))
        return self.encoder(T.concat([a, Tensor(coords)], axis=-1))

    def mix(self, x, block: BlockParams) -> Tensor:
        variant = self.config.variant
        if variant == "fa":
            return fourier_attention(x, block.mixer)
        if variant == "wa":
            return wavelet_attention(x, block.mixer)
        return spectral_attention(x, block.mixer)

    def transformer_block(self, x, index: int) -> Tensor:
        """Pre-norm residual block: mixer sublayer then feed-forward sublayer."""
        block = self.blocks[index]
        x = T.as_tensor(x)
        x_hat = self.mix(block.ln1(x), block) + x
        return mlp_forward(block.ln2(x_hat), block.mlp) + x_hat

    def decode(self, x) -> Tensor:
        out = self.decoder(x)
        if self.config.output_scale != 1.0:
            out = out * self.config.output_scale
        return out

    def forward(self, a) -> Tensor:
        a = T.as_tensor(a)
        self.check_input(a)
        x = self.encode(a)
        for i in range(len(self.blocks)):
            x = self.transformer_block(x, i)
        return self.decode(x)

    __call__ = forward

    def predict(self, a) -> np.ndarray:
        with T.no_grad():
            return self.forward(a).data

    def num_parameters(self) -> int:
        return self.params.num_parameters()


def l2_norm(x, axes) -> Tensor:
    """Euclidean norm over ``axes``; the gradient at a zero norm is taken as zero."""
    x = T.as_tensor(x)
    out = np.sqrt((x.data * x.data).sum(axis=axes))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axes),)

    return make_node(out, (x,), backward)


def _sample_axes(ndim: int) -> tuple[int, ...]:
    # a 3-D array is one sample; a 4-D array is a batch along axis 0
    return tuple(range(ndim - 3, ndim))


def per_sample_relative_l2(pred, target) -> np.ndarray:
    pred = np.asarray(T.as_tensor(pred).data)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    axes = _sample_axes(target.ndim)
    den = np.sqrt((target**2).sum(axis=axes))
    if np.any(den == 0):
        raise MetricError("relative L2 undefined for a zero-norm target")
    num = np.sqrt(((pred - target) ** 2).sum(axis=axes))
    return np.atleast_1d(num / den)


def relative_l2(pred, target) -> Tensor:
    """``||pred - target|| / ||target||`` per sample, averaged over a batch."""
    pred = T.as_tensor(pred)
    target = np.asarray(T.as_tensor(target).data)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    if target.ndim < 3:
        raise DimensionError(f"expected (..., H, W, C) fields, got {target.shape}")
    axes = _sample_axes(target.ndim)
    den = np.sqrt((target**2).sum(axis=axes))
    if np.any(den == 0):
        raise MetricError("relative L2 undefined for a zero-norm target")
    ratio = l2_norm(pred - target, axes) / den
    return T.mean(ratio) if ratio.ndim else ratio
