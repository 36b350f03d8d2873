"""Energy spectra, resolution sweeps and mixer timing."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, MetricError, ValidationError

SPECTRUM_NORM = "ortho"
PARSEVAL_TOL = 1e-8


def _single_channel(field_values) -> np.ndarray:
    x = np.asarray(field_values, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[-1] != 1:
            raise DimensionError(f"energy spectrum needs one channel, got {x.shape[-1]}")
        x = x[..., 0]
    if x.ndim != 2 or min(x.shape) < 1:
        raise DimensionError(f"expected an (H, W) or (H, W, 1) field, got shape {x.shape}")
    return x


def shell_index(h: int, w: int) -> np.ndarray:
    """Integer radial shell of every mode, ``round(sqrt(k1^2 + k2^2))``.

    Frequencies are centered: ``fftfreq`` puts the Nyquist mode at ``-n/2``,
    which has the same magnitude as ``+n/2``.
    """
    k1 = np.fft.fftfreq(h, 1.0 / h)
    k2 = np.fft.fftfreq(w, 1.0 / w)
    return np.rint(np.hypot(k1[:, None], k2[None, :])).astype(np.int64)


@dataclass
class SpectrumReport:
    """Per-shell summed power for one or more labeled fields on one grid.

    Power is ``|c|^2`` with orthonormal DFT coefficients, so each series
    sums to the field's ``sum(x**2)``.
    """

    k: np.ndarray
    series: dict[str, np.ndarray]
    total_energy: dict[str, float]
    grid: tuple[int, int]
    norm: str = SPECTRUM_NORM

    def __post_init__(self):
        for label, e in self.series.items():
            if e.shape != self.k.shape:
                raise DimensionError(f"series {label!r} has {e.shape}, shells {self.k.shape}")
            if np.any(e < 0):
                raise MetricError(f"series {label!r} has negative shell energy")
            resid = self.parseval_residual(label)
            if resid > PARSEVAL_TOL:
                raise MetricError(f"series {label!r} violates Parseval: relative residual {resid:.2e}")

    def parseval_residual(self, label: str) -> float:
        total = self.total_energy[label]
        return abs(float(self.series[label].sum()) - total) / max(total, np.finfo(float).tiny)

    def merge(self, other: "SpectrumReport") -> "SpectrumReport":
        if self.grid != other.grid:
            raise DimensionError(f"cannot merge spectra on grids {self.grid} and {other.grid}")
        clash = set(self.series) & set(other.series)
        if clash:
            raise ValidationError(f"duplicate series labels {sorted(clash)}")
        return SpectrumReport(self.k, {**self.series, **other.series},
                              {**self.total_energy, **other.total_energy}, self.grid, self.norm)

    def rows(self) -> list[list]:
        labels = list(self.series)
        return [[int(k)] + [float(self.series[s][i]) for s in labels] for i, k in enumerate(self.k)]


def energy_spectrum(field_values, label: str = "field") -> SpectrumReport:
    """Bin the power of a single-channel field into integer radial shells."""
    x = _single_channel(field_values)
    h, w = x.shape
    power = np.abs(np.fft.fft2(x, norm=SPECTRUM_NORM)) ** 2
    shells = shell_index(h, w)
    energy = np.bincount(shells.ravel(), weights=power.ravel())
    k = np.arange(energy.size)
    return SpectrumReport(k, {label: energy}, {label: float(np.sum(x * x))}, (h, w))


def spectra(fields: dict[str, np.ndarray]) -> SpectrumReport:
    """One report holding a series for each labeled field."""
    report = None
    for label, values in fields.items():
        r = energy_spectrum(values, label)
        report = r if report is None else report.merge(r)
    if report is None:
        raise ValidationError("no fields given")
    return report


def high_shell_energy_ratio(report: SpectrumReport, label: str, reference: str = "gt",
                            k_min: int | None = None) -> float:
    """Energy of ``label`` over energy of ``reference`` on shells ``k >= k_min``.

    ``k_min`` defaults to a quarter of the smaller grid side, roughly the
    upper half of the resolved band. A value of 1 means matching high-band
    energy.
    """
    if k_min is None:
        k_min = max(1, min(report.grid) // 4)
    band = report.k >= k_min
    ref = float(report.series[reference][band].sum())
    if ref <= 0:
        raise MetricError(f"reference series {reference!r} has no energy above shell {k_min}")
    return float(report.series[label][band].sum()) / ref


# ---------------------------------------------------------------------------
# resolution sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    resolutions: list[int]
    errors: list[float]
    train_resolution: int | None = None

    def __post_init__(self):
        if len(self.resolutions) != len(self.errors) or not self.resolutions:
            raise ValidationError("sweep needs one error per resolution")
        if any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValidationError(f"resolutions must be strictly increasing: {self.resolutions}")
        if not all(np.isfinite(self.errors)):
            raise MetricError(f"non-finite sweep errors: {self.errors}")

    @property
    def best_resolution(self) -> int:
        return self.resolutions[int(np.argmin(self.errors))]

    def minimum_at_training_resolution(self) -> bool:
        return self.train_resolution is not None and self.best_resolution == self.train_resolution

    def rows(self) -> list[list]:
        return [[r, e, int(r == self.train_resolution)] for r, e in zip(self.resolutions, self.errors)]


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

@dataclass
class TimingResult:
    name: str
    n: list[int]
    seconds: list[float]
    runs: list[list[float]] = field(default_factory=list, repr=False)

    def doubling_ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.seconds, self.seconds[1:])]


MIN_RUN_SECONDS = 0.05
EVICT_BYTES = 16 << 20


def cache_evictor(nbytes: int = EVICT_BYTES):
    """Callable that overwrites ``nbytes`` of scratch memory.

    Run before each timed call so every problem size starts from the same
    cache state; otherwise inputs small enough to stay cache resident
    between calls are timed faster than larger ones.
    """
    scratch = np.zeros(nbytes // 8)

    def evict():
        np.add(scratch, 1.0, out=scratch)

    return evict


def time_callable(fn, repeats: int = 5, inner: int | None = None,
                  min_run_seconds: float = MIN_RUN_SECONDS,
                  before=None) -> tuple[float, list[float]]:
    """Median over ``repeats`` runs of the mean time per call within a run.

    With ``inner=None`` each run makes enough calls to last at least
    ``min_run_seconds``, which keeps millisecond-scale calls above timer and
    scheduler noise. ``before`` is called untimed ahead of every call.
    """
    prep = before if before is not None else (lambda: None)
    prep()
    t0 = time.perf_counter()
    fn()  # warm-up, also sizes the runs
    first = time.perf_counter() - t0
    if inner is None:
        inner = max(1, math.ceil(min_run_seconds / max(first, 1e-9)))
    runs = []
    for _ in range(repeats):
        total = 0.0
        for _ in range(inner):
            prep()
            t0 = time.perf_counter()
            fn()
            total += time.perf_counter() - t0
        runs.append(total / inner)
    return statistics.median(runs), runs


def bench_mixers(n_values, width: int = 64, repeats: int = 5, seed: int = 0,
                 inner: int | None = None) -> list[TimingResult]:
    """Forward time of linear attention and Fourier attention versus token count.

    Fourier attention runs on a ``32 x n/32`` grid, so every ``n`` must be a
    multiple of 64 (an even number of columns). Each timed call starts with
    the cache evicted (see :func:`cache_evictor`).
    """
    from . import attention as A
    from . import tensor as T
    from .nn import ParameterStore

    n_values = [int(n) for n in n_values]
    if any(n < 64 or n % 64 for n in n_values):
        raise ValidationError(f"token counts must be positive multiples of 64, got {n_values}")
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed)
    fa = A.FourierAttentionParams.init(store, "fa", width)
    evict = cache_evictor()
    lin = TimingResult("linear_attention", [], [])
    four = TimingResult("fourier_attention", [], [])
    with T.no_grad():
        for n in n_values:
            q, k, v = (rng.standard_normal((n, width)) for _ in range(3))
            med, runs = time_callable(lambda: A.linear_attention(q, k, v), repeats, inner,
                                      before=evict)
            lin.n.append(n), lin.seconds.append(med), lin.runs.append(runs)
            x = rng.standard_normal((32, n // 32, width))
            med, runs = time_callable(lambda: A.fourier_attention(x, fa), repeats, inner,
                                      before=evict)
            four.n.append(n), four.seconds.append(med), four.runs.append(runs)
    return [lin, four]
