"""Noise-distribution and fidelity metrics."""
from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .raw import RawPatch, SensorProfile
from .rng import RngStream

DEFAULT_BINS = 256
DEFAULT_RANGE = (-0.5, 0.5)


@dataclass(frozen=True, eq=False)
class NoiseHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if len(self.counts) < 2 or len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("histogram needs B >= 2 bins and B + 1 edges")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(self.counts < 0) or int(self.counts.sum()) != self.total:
            raise ValueError("counts must be non-negative and sum to total")

    @property
    def bins(self) -> int:
        return len(self.counts)


def residual_histogram(residual: np.ndarray, bins: int = DEFAULT_BINS,
                       range: tuple[float, float] = DEFAULT_RANGE) -> NoiseHistogram:  # noqa: A002
    lo, hi = range
    counts = _kernels.histogram_counts(residual, lo, hi, bins)
    return NoiseHistogram(np.linspace(lo, hi, bins + 1), counts, int(counts.sum()))


def noise_histogram(noisy: RawPatch, clean: RawPatch, bins: int = DEFAULT_BINS,
                    range: tuple[float, float] = DEFAULT_RANGE) -> NoiseHistogram:  # noqa: A002
    """Histogram of ``noisy - clean`` in normalized units; outliers land in the edge bins."""
    if noisy.shape != clean.shape:
        raise ValueError(f"shape mismatch {noisy.shape} vs {clean.shape}")
    residual = (noisy.signal() - clean.signal()) / clean.value_range
    return residual_histogram(residual, bins, range)


def kld(p: NoiseHistogram, q: NoiseHistogram, alpha: float = 1.0) -> float:
    """KL(p || q) of histograms after adding ``alpha`` to every bin count."""
    if p.bins != q.bins or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ValueError("histograms have different bin edges")
    ph = (p.counts + alpha) / (p.total + alpha * p.bins)
    qh = (q.counts + alpha) / (q.total + alpha * q.bins)
    mask = ph > 0
    return float(max(0.0, np.sum(ph[mask] * np.log(ph[mask] / qh[mask]))))


class NoiseModel(Protocol):
    name: str

    def synthesize(self, clean: np.ndarray, profile: SensorProfile, value_range: float,
                   rng: RngStream, real: np.ndarray | None = None) -> np.ndarray:
        """Noisy DN image for a black-subtracted DN ``clean`` image."""


@dataclass
class AKLDResult:
    model: str
    value: float
    per_image: list[float] = field(default_factory=list)
    per_comparison: list[list[float]] = field(default_factory=list)


def akld(model: NoiseModel, clean: Sequence[np.ndarray], real: Sequence[np.ndarray],
         profiles: Sequence[SensorProfile], value_range: float, samples_per_image: int = 10,
         rng: RngStream | None = None, bins: int = DEFAULT_BINS,
         range: tuple[float, float] = DEFAULT_RANGE, quantize: bool = True) -> AKLDResult:  # noqa: A002
    """Average KL divergence between synthetic and real residual histograms.

    ``clean``/``real`` hold black-subtracted DN images and ``profiles`` the
    per-image sensor profile. With ``quantize`` the synthetic DN values are
    rounded to integers, as an LRF file would store them.
    """
    if not len(clean) == len(real) == len(profiles):
        raise ValueError("clean, real and profiles must have equal length")
    rng = rng or RngStream(0)
    per_image, comps = [], []
    for i, (y, d, prof) in enumerate(zip(clean, real, profiles)):
        h_real = residual_histogram((d - y) / value_range, bins, range)
        vals = []
        for m in builtins.range(samples_per_image):  # ``range`` is the histogram span here
            syn = model.synthesize(y, prof, value_range, rng.spawn(i, m), real=d)
            if quantize:
                syn = np.rint(syn)
            vals.append(kld(residual_histogram((syn - y) / value_range, bins, range), h_real))
        comps.append(vals)
        per_image.append(float(np.mean(vals)))
    return AKLDResult(getattr(model, "name", type(model).__name__), float(np.mean(per_image)),
                      per_image, comps)


def psnr(a, b) -> float:
    """PSNR in dB for unit dynamic range, capped at 100 dB."""
    a = a.data if isinstance(a, RawPatch) else np.asarray(a)
    b = b.data if isinstance(b, RawPatch) else np.asarray(b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 100.0
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all valid window positions of every channel (unit dynamic range)."""
    a = a.data if isinstance(a, RawPatch) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, RawPatch) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < win or a.shape[-2] < win:
        raise ValueError(f"images smaller than the {win}x{win} window")
    w = gaussian_window(win, sigma)
    c1, c2 = k1**2, k2**2

    def filt(x):
        return np.tensordot(sliding_window_view(x, (win, win), axis=(-2, -1)), w, axes=([-2, -1], [0, 1]))
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())
