"""Central finite-difference verification of backward-pass gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DeterminismError, DimensionError
from .nn import ParameterStore
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error between analytic and numeric gradients."""

    errors: dict[str, float] = field(default_factory=dict)
    elementwise: dict[str, float] = field(default_factory=dict)
    max_abs_numeric: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return all(err < tol for err in self.errors.values())

    def failures(self, tol: float) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if not v < tol}


def _scalar(value) -> float:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.size != 1:
        raise DimensionError(f"grad_check needs a scalar-valued function, got shape {arr.shape}")
    return float(arr.reshape(()))


def grad_check(
    fn: Callable[[ParameterStore], Tensor],
    params: ParameterStore,
    h: float = 1e-5,
    floor: float = 1e-8,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare ``fn``'s backward gradients with central differences.

    ``g`` is the analytic and ``n`` the numeric gradient of one named
    parameter. The reported error is ``max_i |g_i - n_i|`` divided by
    ``max(max_i |g_i|, max_i |n_i|, floor)``, i.e. measured against the
    parameter's own gradient scale. Entries far below that scale sit under
    the finite-difference roundoff (about ``eps * |fn| / h``), so the purely
    entrywise ratio ``|g_i - n_i| / max(|g_i|, |n_i|, floor)`` is kept in
    ``report.elementwise`` as a diagnostic only.

    Parameter values are restored exactly afterwards.
    """
    params.zero_grad()
    loss = fn(params)
    first = _scalar(loss)
    with no_grad():
        again = _scalar(fn(params))
    if first != again and not (np.isnan(first) and np.isnan(again)):
        raise DeterminismError(
            f"fn returned {first!r} then {again!r} at identical parameters"
        )
    loss.backward()
    analytic = {k: p.grad.copy() for k, p in params.items()}

    report = GradCheckReport()
    for name in names if names is not None else params.names():
        p = params[name]
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                plus = _scalar(fn(params))
                flat[i] = orig - h
                minus = _scalar(fn(params))
                flat[i] = orig
                numeric[i] = (plus - minus) / (2.0 * h)
        if not flat.size:
            report.errors[name] = report.elementwise[name] = report.max_abs_numeric[name] = 0.0
            continue
        g = analytic[name].reshape(-1)
        diff = np.abs(g - numeric)
        scale = max(float(np.max(np.abs(g))), float(np.max(np.abs(numeric))), floor)
        report.errors[name] = float(diff.max()) / scale
        entry_denom = np.maximum(np.maximum(np.abs(g), np.abs(numeric)), floor)
        report.elementwise[name] = float(np.max(diff / entry_denom))
        report.max_abs_numeric[name] = float(np.max(np.abs(numeric)))
    params.zero_grad()
    return report
