"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and, when any input requires a
gradient, records the closure that maps the output gradient to input
gradients. :meth:`Tensor.backward` replays those closures in reverse
topological order and *accumulates* into leaf ``.grad`` buffers.

Only the operations the operator model needs are provided; broadcasting is
supported for elementwise arithmetic so that bias vectors and gates can be
applied along the trailing axis.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError

DTYPE = np.float64

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backward pass --------------------------------------------------
    def backward(self, grad=None) -> None:
        """Propagate ``grad`` (default: ones) to every leaf requiring grad.

        Leaf gradients are added to whatever is already stored, so calling
        backward on two graphs sharing a leaf sums their contributions.
        """
        if not self.requires_grad:
            return
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != self.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.shape}"
                )

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op with the given parents.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return make_node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so neither branch overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return make_node(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + alpha),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh-form Gaussian error linear unit (smooth everywhere)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_node(out, (a,), backward)


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "tanh": tanh,
    "identity": identity,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return make_node(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    advanced = _needs_add_at(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_node(np.array(out, copy=True), (a,), backward)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(
                f"cannot concatenate shapes {tensors[0].shape} and {t.shape} on axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_node(out, tuple(tensors), backward)


def split(a, sections: int, axis: int = -1) -> list[Tensor]:
    """Split into equal parts along ``axis`` (each part is its own node)."""
    a = as_tensor(a)
    ax = axis % a.ndim
    n = a.shape[ax]
    if n % sections:
        raise DimensionError(f"axis of length {n} not divisible into {sections} parts")
    step = n // sections
    parts = []
    for s in range(sections):
        index = [slice(None)] * a.ndim
        index[ax] = slice(s * step, (s + 1) * step)
        parts.append(getitem(a, tuple(index)))
    return parts


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.ndim == 1:
            ga = np.matmul(g[..., None, :], np.swapaxes(b.data, -1, -2))[..., 0, :]
            gb = a.data[:, None] * g[..., None, :]
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` applied along the trailing axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(
                f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}"
            )
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if bias.requires_grad else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)
