"""Parameter storage and the dense layers used by the operator model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor, make_node


class ParameterStore:
    """Ordered mapping from parameter path to trainable :class:`Tensor`.

    All random initialization draws from a single generator seeded at
    construction, so the same sequence of ``uniform``/``zeros`` calls yields
    bit-identical parameters.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise ConfigurationError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=T.DTYPE, copy=True), requires_grad=True, name=path)
        self._params[path] = t
        return t

    def uniform(self, path: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(path, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, path: str, shape) -> Tensor:
        return self.add(path, np.zeros(shape))

    def ones(self, path: str, shape) -> Tensor:
        return self.add(path, np.ones(shape))

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = [k for k in self._params if k not in state]
        extra = [k for k in state if k not in self._params]
        if missing or extra:
            raise ConfigurationError(
                f"parameter set mismatch: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        for k, p in self._params.items():
            value = np.asarray(state[k], dtype=T.DTYPE)
            if value.shape != p.shape:
                raise ConfigurationError(
                    f"parameter {k!r}: stored shape {value.shape} != expected {p.shape}"
                )
        for k, p in self._params.items():
            p.data = np.array(state[k], dtype=T.DTYPE, copy=True)
            p.zero_grad()


def linear_forward(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the trailing axis."""
    return T.linear(x, weight, bias)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing-axis row to zero mean and unit variance."""
    x, gamma, beta = T.as_tensor(x), T.as_tensor(gamma), T.as_tensor(beta)
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}"
        )
    if not np.all(np.isfinite(x.data)):
        raise NumericError("layer_norm received non-finite input")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        gx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), backward)


def conv3x3_same(x, kernel, bias=None) -> Tensor:
    """Stride-1 3x3 cross-correlation with one cell of zero padding.

    ``x`` is ``(..., H, W, Cin)``, ``kernel`` is ``(3, 3, Cin, Cout)``.
    """
    x, kernel = T.as_tensor(x), T.as_tensor(kernel)
    if x.ndim < 3:
        raise DimensionError(f"conv3x3_same expects (..., H, W, C), got {x.shape}")
    if kernel.shape[:2] != (3, 3) or kernel.ndim != 4 or kernel.shape[2] != x.shape[-1]:
        raise DimensionError(
            f"conv3x3_same: kernel {kernel.shape} incompatible with input channels {x.shape}"
        )
    h, w, cin = x.shape[-3:]
    cout = kernel.shape[3]
    lead = x.shape[:-3]
    pad_width = [(0, 0)] * len(lead) + [(1, 1), (1, 1), (0, 0)]
    padded = np.pad(x.data, pad_width)
    cols = np.concatenate(
        [padded[..., i:i + h, j:j + w, :] for i in range(3) for j in range(3)], axis=-1
    )
    kmat = kernel.data.reshape(9 * cin, cout)
    out = cols @ kmat
    if bias is not None:
        bias = T.as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv3x3_same: bias {bias.shape} != ({cout},)")
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.reshape(-1, 9 * cin).T @ g2).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = (g @ kmat.T).reshape(lead + (h, w, 9, cin))
            gpad = np.zeros_like(padded)
            for t in range(9):
                i, j = divmod(t, 3)
                gpad[..., i:i + h, j:j + w, :] += gcols[..., t, :]
            gx = gpad[..., 1:-1, 1:-1, :]
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out, parents, backward)


def conv1x1(x, weight, bias=None) -> Tensor:
    """Pointwise convolution; identical to a channel-wise linear map."""
    return T.linear(x, weight, bias)


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor | None

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, d_in: int, d_out: int, bias: bool = True):
        w = store.uniform(f"{prefix}.weight", (d_in, d_out), fan_in=d_in)
        b = store.zeros(f"{prefix}.bias", (d_out,)) if bias else None
        return cls(w, b)

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int, eps: float = 1e-5):
        return cls(store.ones(f"{prefix}.gamma", (width,)), store.zeros(f"{prefix}.beta", (width,)), eps)

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


@dataclass
class MLPParams:
    """Two-layer feed-forward network ``D -> ratio*D -> D``."""

    fc1: LinearParams
    fc2: LinearParams
    activation: str = "gelu"

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, width: int, ratio: int = 1,
             activation: str = "gelu"):
        hidden = int(ratio * width)
        if hidden < 1:
            raise ConfigurationError(f"mlp hidden width must be positive, got {hidden}")
        return cls(
            LinearParams.init(store, f"{prefix}.fc1", width, hidden),
            LinearParams.init(store, f"{prefix}.fc2", hidden, width),
            activation,
        )


def mlp_forward(x, params: MLPParams) -> Tensor:
    act = T.activation(params.activation)
    return params.fc2(act(params.fc1(x)))


def block_linear(x, weight) -> Tensor:
    """Block-diagonal linear map over the trailing axis.

    ``x`` is ``(..., k*b)`` and ``weight`` is ``(k, b, m)``; block ``i`` of
    the input channels is multiplied by ``weight[i]`` giving ``(..., k*m)``.
    """
    x, weight = T.as_tensor(x), T.as_tensor(weight)
    if weight.ndim != 3:
        raise DimensionError(f"block weight must be (k, b, m), got {weight.shape}")
    k, b, m = weight.shape
    if x.shape[-1] != k * b:
        raise DimensionError(
            f"block_linear: input width {x.shape[-1]} != {k} blocks x {b} channels"
        )
    lead = x.shape[:-1]
    xr = x.data.reshape(-1, k, b).transpose(1, 0, 2)
    out = np.matmul(xr, weight.data)
    result = out.transpose(1, 0, 2).reshape(lead + (k * m,))

    def backward(g):
        gr = g.reshape(-1, k, m).transpose(1, 0, 2)
        gx = None
        if x.requires_grad:
            gx = np.matmul(gr, weight.data.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(x.shape)
        gw = np.matmul(xr.transpose(0, 2, 1), gr) if weight.requires_grad else None
        return gx, gw

    return make_node(result, (x, weight), backward)


def _block_diag(w: np.ndarray) -> np.ndarray:
    k, b, m = w.shape
    out = np.zeros((k * b, k * m))
    for i in range(k):
        out[i * b:(i + 1) * b, i * m:(i + 1) * m] = w[i]
    return out


def _diag_blocks(g: np.ndarray, k: int, b: int, m: int) -> np.ndarray:
    return np.einsum("ibim->ibm", g.reshape(k, b, k, m))


def complex_block_linear(z, w_re, w_im) -> Tensor:
    """Block-diagonal complex linear map on a ``[real | imag]`` packed axis.

    ``z`` is ``(..., 2*k*b)``; ``w_re`` and ``w_im`` are ``(k, b, m)``. The
    product runs as one real matmul against
    ``[[BD(w_re), BD(w_im)], [-BD(w_im), BD(w_re)]]``, which beats k small
    matmuls for the block counts used here.
    """
    z, w_re, w_im = T.as_tensor(z), T.as_tensor(w_re), T.as_tensor(w_im)
    if w_re.ndim != 3 or w_re.shape != w_im.shape:
        raise DimensionError(
            f"complex block weights must both be (k, b, m), got {w_re.shape} and {w_im.shape}"
        )
    k, b, m = w_re.shape
    n_in, n_out = k * b, k * m
    if z.shape[-1] != 2 * n_in:
        raise DimensionError(
            f"complex_block_linear: packed width {z.shape[-1]} != 2 x {k} blocks x {b} channels"
        )
    br, bi = _block_diag(w_re.data), _block_diag(w_im.data)
    dense = np.block([[br, bi], [-bi, br]])
    flat = z.data.reshape(-1, 2 * n_in)
    out = (flat @ dense).reshape(z.shape[:-1] + (2 * n_out,))

    def backward(g):
        g2 = g.reshape(-1, 2 * n_out)
        gz = (g2 @ dense.T).reshape(z.shape) if z.requires_grad else None
        gre = gim = None
        if w_re.requires_grad or w_im.requires_grad:
            gd = flat.T @ g2
            top_left, top_right = gd[:n_in, :n_out], gd[:n_in, n_out:]
            bottom_left, bottom_right = gd[n_in:, :n_out], gd[n_in:, n_out:]
            gre = _diag_blocks(top_left + bottom_right, k, b, m)
            gim = _diag_blocks(top_right - bottom_left, k, b, m)
        return gz, gre, gim

    return make_node(out, (z, w_re, w_im), backward)
