"""Synthetic Darcy-flow data: two-level coefficients, a finite-difference
solver and endpoint-aligned bilinear resampling.

Grids are node-based on the unit square: node ``(i, j)`` of an ``H x W``
grid sits at ``(i / (H - 1), j / (W - 1))`` and the outer ring of nodes is
the Dirichlet boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, EvenDimensionError, ValidationError

DEFAULT_LEVELS = (3.0, 12.0)


@dataclass
class GridSample:
    """An input/output pair on a common grid: ``a`` is ``(H, W, d_a)``, ``u`` is ``(H, W, d_u)``."""

    a: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.a.ndim != 3 or self.u.ndim != 3 or self.a.shape[:2] != self.u.shape[:2]:
            raise ValidationError(
                f"sample fields must be (H, W, C) on one grid, got {self.a.shape} and {self.u.shape}"
            )
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.u))):
            raise ValidationError("sample fields contain non-finite values")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.a.shape[0], self.a.shape[1]


# ---------------------------------------------------------------------------
# random coefficients
# ---------------------------------------------------------------------------

@dataclass
class RandomFourierField:
    """A mean-zero Gaussian random field stored as Fourier-series coefficients.

    Because it is a continuous function it can be sampled on any grid, so
    one draw yields consistent inputs at every resolution.
    """

    coefficients: np.ndarray  # (n_modes + 1, 2 * n_modes + 1) complex
    n_modes: int

    @classmethod
    def draw(cls, seed, smoothness: float = 2.0, n_modes: int = 16, length_scale: float = 3.0):
        rng = np.random.default_rng(seed)
        k1 = np.arange(n_modes + 1)[:, None]
        k2 = np.arange(-n_modes, n_modes + 1)[None, :]
        amp = (4 * np.pi**2 * (k1**2 + k2**2) + length_scale**2) ** (-smoothness / 2.0)
        amp[0, n_modes] = 0.0  # no DC: mean-zero field
        noise = rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape)
        return cls(amp * noise, n_modes)

    def evaluate(self, h: int, w: int) -> np.ndarray:
        x = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
        y = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
        k1 = np.arange(self.n_modes + 1)
        k2 = np.arange(-self.n_modes, self.n_modes + 1)
        ex = np.exp(2j * np.pi * np.outer(x, k1))
        ey = np.exp(2j * np.pi * np.outer(y, k2))
        return (ex @ self.coefficients @ ey.T).real


@dataclass
class CoefficientField:
    """Strictly positive two-level diffusion coefficient, shape ``(H, W, 1)``."""

    values: np.ndarray
    seed: object = None
    smoothness: float = 2.0
    levels: tuple[float, float] = DEFAULT_LEVELS

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


def threshold_field(field_values: np.ndarray, levels=DEFAULT_LEVELS, threshold: float = 0.0) -> np.ndarray:
    lo, hi = levels
    return np.where(field_values >= threshold, float(hi), float(lo))[..., None]


def _check_levels(levels) -> tuple[float, float]:
    lo, hi = (float(v) for v in levels)
    if not (lo > 0 and hi > 0):
        raise ValidationError(f"coefficient levels must be positive, got {levels}")
    return lo, hi


def sample_coefficient(seed, h: int, w: int, smoothness: float = 2.0,
                       levels=DEFAULT_LEVELS, threshold: float = 0.0,
                       n_modes: int = 16) -> CoefficientField:
    """Threshold a Gaussian random field into ``hi`` (field >= threshold) and ``lo``.

    Pass ``threshold=-np.inf`` for a constant ``hi`` field.
    """
    levels = _check_levels(levels)
    if h % 2 or w % 2:
        raise EvenDimensionError(f"coefficient grids must be even-sized, got {h}x{w}")
    grf = RandomFourierField.draw(seed, smoothness, n_modes)
    values = threshold_field(grf.evaluate(h, w), levels, threshold)
    return CoefficientField(values, seed, smoothness, levels)


# ---------------------------------------------------------------------------
# finite-difference solver
# ---------------------------------------------------------------------------

@dataclass
class PressureField:
    """Solution ``u`` of shape ``(H, W, 1)`` with zero boundary ring."""

    values: np.ndarray
    residual: float
    iterations: int

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assemble_darcy(a: np.ndarray) -> sp.csr_matrix:
    """Five-point conservative stencil for ``-div(a grad u)`` on interior nodes.

    Face coefficients are harmonic means of the two adjacent node values.
    Rows follow C order over the ``(H-2) x (W-2)`` interior.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    h, w = a.shape
    if h < 3 or w < 3:
        raise ValidationError(f"grid needs at least 3x3 nodes, got {h}x{w}")
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ValidationError("diffusion coefficient must be finite and strictly positive")
    inv_hx2 = (h - 1) ** 2
    inv_hy2 = (w - 1) ** 2
    ni, nj = h - 2, w - 2
    # face coefficients between vertically / horizontally adjacent nodes
    fv = _harmonic(a[:-1, :], a[1:, :]) * inv_hx2  # (h-1, w)
    fh = _harmonic(a[:, :-1], a[:, 1:]) * inv_hy2  # (h, w-1)
    north = fv[0:ni, 1:w - 1]
    south = fv[1:ni + 1, 1:w - 1]
    west = fh[1:h - 1, 0:nj]
    east = fh[1:h - 1, 1:nj + 1]
    diag = (north + south + west + east).ravel()
    idx = np.arange(ni * nj).reshape(ni, nj)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag]
    # off-diagonals; each coupling appears once per direction so A stays symmetric
    rows.append(idx[1:, :].ravel()); cols.append(idx[:-1, :].ravel()); vals.append(-north[1:, :].ravel())
    rows.append(idx[:-1, :].ravel()); cols.append(idx[1:, :].ravel()); vals.append(-south[:-1, :].ravel())
    rows.append(idx[:, 1:].ravel()); cols.append(idx[:, :-1].ravel()); vals.append(-west[:, 1:].ravel())
    rows.append(idx[:, :-1].ravel()); cols.append(idx[:, 1:].ravel()); vals.append(-east[:, :-1].ravel())
    n = ni * nj
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def conjugate_gradient(A, b: np.ndarray, rtol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    """Jacobi-preconditioned conjugate gradients on an SPD matrix.

    Returns ``(x, relative_residual, iterations)`` where the residual is the
    true ``||b - A x|| / ||b||``, recomputed whenever the recursive estimate
    says the tolerance is met.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0, 0
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    rel = 1.0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) / bnorm < rtol:
            r = b - A @ x
            rel = np.linalg.norm(r) / bnorm
            if rel < rtol:
                return x, float(rel), it
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    rel = np.linalg.norm(b - A @ x) / bnorm
    raise ConvergenceError(
        f"CG did not reach relative residual {rtol:g} in {max_iter} iterations "
        f"(residual {rel:.3e})",
        residual=float(rel),
        iterations=max_iter,
    )


def solve_darcy(a, forcing: float = 1.0, rtol: float = 1e-11,
                max_iter: int | None = None) -> PressureField:
    """Solve ``-div(a grad u) = forcing`` with ``u = 0`` on the boundary.

    ``a`` holds node values of the coefficient, shape ``(H, W)`` or
    ``(H, W, 1)``. The default budget is ``10 * H * W`` iterations.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    h, w = a.shape
    A = assemble_darcy(a)
    f = np.full(A.shape[0], float(forcing))
    budget = 10 * h * w if max_iter is None else int(max_iter)
    x, rel, iters = conjugate_gradient(A, f, rtol, budget)
    u = np.zeros((h, w))
    u[1:-1, 1:-1] = x.reshape(h - 2, w - 2)
    return PressureField(u[..., None], rel, iters)


def darcy_residual(a, u, forcing: float = 1.0) -> float:
    """``||A u - f|| / ||f||`` over interior nodes."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 3:
        u = u[..., 0]
    A = assemble_darcy(a)
    f = np.full(A.shape[0], float(forcing))
    return float(np.linalg.norm(A @ u[1:-1, 1:-1].ravel() - f) / np.linalg.norm(f))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _interp_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = x.shape[axis]
    if n_in == n_out:
        return x
    if n_in == 1:
        return np.repeat(x, n_out, axis=axis)
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1 - frac) + np.take(x, lo + 1, axis=axis) * frac


def resample(field_values, h2: int, w2: int, require_even: bool = True) -> np.ndarray:
    """Bilinear interpolation of ``(..., H, W, C)`` onto an ``h2 x w2`` endpoint-aligned grid."""
    x = np.asarray(field_values, dtype=np.float64)
    if x.ndim < 3:
        raise ValidationError(f"expected (..., H, W, C), got shape {x.shape}")
    if h2 < 2 or w2 < 2:
        raise ValidationError(f"target resolution must be at least 2x2, got {h2}x{w2}")
    if require_even and (h2 % 2 or w2 % 2):
        raise EvenDimensionError(f"target resolution must be even, got {h2}x{w2}")
    x = _interp_axis(x, h2, x.ndim - 3)
    return _interp_axis(x, w2, x.ndim - 2)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass
class GenerationConfig:
    n_train: int = 64
    n_test: int = 16
    resolution: int = 32
    reference_resolution: int = 128
    test_resolutions: tuple[int, ...] = (16, 32, 64)
    smoothness: float = 2.0
    n_modes: int = 16
    lo: float = DEFAULT_LEVELS[0]
    hi: float = DEFAULT_LEVELS[1]
    threshold: float = 0.0
    forcing: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_train < 0 or self.n_test < 0:
            raise ValidationError("sample counts must be non-negative")
        for r in (self.resolution, self.reference_resolution, *self.test_resolutions):
            if int(r) < 4 or int(r) % 2:
                raise EvenDimensionError(f"resolutions must be even and >= 4, got {r}")
        _check_levels((self.lo, self.hi))


def generate_samples(n: int, seed, resolutions, reference_resolution: int = 128,
                     smoothness: float = 2.0, n_modes: int = 16, levels=DEFAULT_LEVELS,
                     threshold: float = 0.0, forcing: float = 1.0,
                     residuals: list | None = None) -> dict[int, list[GridSample]]:
    """Draw ``n`` coefficient fields, solve each once on the reference grid and
    return samples at every requested resolution.

    Inputs are the random field thresholded directly on each grid; outputs are
    the reference solution resampled, so all resolutions share one solution.
    The relative residual of each reference solve is appended to
    ``residuals`` when a list is given.
    """
    levels = _check_levels(levels)
    seeds = np.random.SeedSequence(seed).spawn(n)
    out: dict[int, list[GridSample]] = {int(r): [] for r in resolutions}
    for ss in seeds:
        grf = RandomFourierField.draw(ss, smoothness, n_modes)
        a_ref = threshold_field(grf.evaluate(reference_resolution, reference_resolution), levels, threshold)
        solution = solve_darcy(a_ref, forcing)
        if solution.residual >= 1e-10:
            raise ConvergenceError(f"reference solve residual {solution.residual:.3e} >= 1e-10",
                                   residual=solution.residual)
        if residuals is not None:
            residuals.append(solution.residual)
        u_ref = solution.values
        for r in out:
            a = threshold_field(grf.evaluate(r, r), levels, threshold)
            out[r].append(GridSample(a, resample(u_ref, r, r)))
    return out


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into ``(N, H, W, d_a)`` and ``(N, H, W, d_u)`` arrays."""
    samples = list(samples)
    if not samples:
        raise ValidationError("no samples to stack")
    shapes = {s.resolution for s in samples}
    if len(shapes) != 1:
        raise ValidationError(f"samples have mixed resolutions {sorted(shapes)}")
    return np.stack([s.a for s in samples]), np.stack([s.u for s in samples])
