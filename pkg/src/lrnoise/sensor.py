"""Physics-based noise synthesis and photon-transfer calibration.

All samplers work on black-level-subtracted DN. Shot noise follows
``Poisson(Y / K) * K`` so the result already carries the system gain.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .raw import OracleNoiseParams, RawPatch, SensorProfile
from .rng import RngStream

POISSON_SWITCH = 30.0


class NoiseKind(enum.Enum):
    SIGNAL_DEPENDENT = "signal_dependent"
    SIGNAL_INDEPENDENT = "signal_independent"
    COMPOSITE = "composite"


class BaselineModel(enum.Enum):
    AWGN = "awgn"
    POISSON_GAUSSIAN = "pg"


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseField:
    data: np.ndarray
    kind: NoiseKind


def poisson(lam: np.ndarray, rng: RngStream, switch: float = POISSON_SWITCH) -> np.ndarray:
    """Poisson counts: exact inversion below ``switch``, rounded Gaussian above."""
    lam = np.asarray(lam, dtype=np.float64)
    u = rng.uniform(lam.shape)
    z = rng.normal(lam.shape)
    out = np.empty(lam.shape)
    small = lam < switch
    if small.any():
        out[small] = _kernels.poisson_inversion(lam[small], u[small])
    big = ~small
    if big.any():
        lb = lam[big]
        out[big] = np.maximum(np.rint(lb + np.sqrt(lb) * z[big]), 0.0)
    return out


def shot_noise(signal: np.ndarray, gain_K: float, rng: RngStream,
               switch: float = POISSON_SWITCH) -> np.ndarray:
    """Array form of :func:`sample_shot_noise`; returns ``Poisson(signal / K) * K``."""
    if not gain_K > 0:
        raise ValueError(f"gain K must be > 0, got {gain_K}")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size and signal.min() < 0:
        raise ValueError("shot noise needs a non-negative signal (black-level subtracted DN)")
    return poisson(signal / gain_K, rng, switch) * gain_K


def sample_shot_noise(clean: RawPatch, gain_K: float, rng: RngStream,
                      switch: float = POISSON_SWITCH) -> RawPatch:
    if clean.normalized:
        raise ValueError("shot noise is sampled in the DN domain, got a normalized patch")
    y_hat = shot_noise(clean.signal(), gain_K, rng, switch)
    return RawPatch.from_signal(y_hat, clean.black_level, clean.white_level)


def oracle_indep(shape: tuple[int, ...], params: OracleNoiseParams, rng: RngStream) -> np.ndarray:
    """Gaussian read noise + per-row banding, quantized with ``quant_step``.

    ``shape`` ends in ``(..., rows, cols)``; one banding offset is drawn per
    leading index and row.
    """
    g = rng.normal(shape, params.sigma_read)
    r = rng.normal(tuple(shape[:-1]) + (1,), params.sigma_row)
    x = g + r
    if params.quant_step > 0:
        # N = g + r + q with q the quantization residual, i.e. the quantized value itself
        x = params.quant_step * np.rint(x / params.quant_step)
    return x


def sample_oracle_indep(shape: tuple[int, ...], params: OracleNoiseParams,
                        rng: RngStream) -> NoiseField:
    return NoiseField(oracle_indep(shape, params, rng), NoiseKind.SIGNAL_INDEPENDENT)


def physics_noisy(signal: np.ndarray, profile: SensorProfile, value_range: float,
                  rng: RngStream) -> np.ndarray:
    """Array form of :func:`synthesize_physics` in black-subtracted DN."""
    if profile.oracle is None:
        raise ValueError(f"profile for ISO {profile.iso} has no oracle noise parameters")
    y_hat = shot_noise(signal, profile.gain_K, rng.spawn(0))
    n_indep = oracle_indep(np.shape(signal), profile.oracle, rng.spawn(1))
    return np.clip(y_hat + n_indep, 0.0, value_range)


def synthesize_physics(clean: RawPatch, profile: SensorProfile, rng: RngStream) -> RawPatch:
    d = physics_noisy(clean.signal(), profile, clean.value_range, rng)
    return RawPatch.from_signal(d, clean.black_level, clean.white_level)


def awgn_sigma(signal: np.ndarray, profile: SensorProfile) -> float:
    """AWGN level matching the total oracle noise power of ``signal``."""
    indep = profile.oracle.total_variance if profile.oracle is not None else profile.sigma_r**2
    return float(np.sqrt(profile.gain_K * np.mean(signal) + indep))


def baseline_noisy(signal: np.ndarray, profile: SensorProfile, model: BaselineModel | str,
                   value_range: float, rng: RngStream, sigma: float | None = None) -> np.ndarray:
    """Array form of :func:`synthesize_baseline`.

    ``sigma`` overrides the AWGN level; by default it is moment-matched to
    the oracle noise power of ``signal``.
    """
    try:
        model = BaselineModel(model)
    except ValueError:
        raise ValueError(f"unknown baseline model {model!r}") from None
    signal = np.asarray(signal, dtype=np.float64)
    if model is BaselineModel.AWGN:
        if sigma is None:
            sigma = awgn_sigma(signal, profile)
        out = signal + rng.spawn(1).normal(signal.shape, sigma)
    else:
        y_hat = shot_noise(signal, profile.gain_K, rng.spawn(0))
        out = y_hat + rng.spawn(1).normal(signal.shape, profile.sigma_r)
    return np.clip(out, 0.0, value_range)


def synthesize_baseline(clean: RawPatch, profile: SensorProfile, model: BaselineModel | str,
                        rng: RngStream, sigma: float | None = None) -> RawPatch:
    d = baseline_noisy(clean.signal(), profile, model, clean.value_range, rng, sigma)
    return RawPatch.from_signal(d, clean.black_level, clean.white_level)


@dataclass(frozen=True)
class PTCResult:
    gain_K: float
    sigma_r: float
    negative_intercept: bool
    means: np.ndarray
    variances: np.ndarray


def _pair_variance(frames: Sequence[np.ndarray]) -> float:
    # differences of consecutive frames cancel fixed structure; var(a - b) = 2 var
    diffs = [np.var(frames[i + 1] - frames[i]) / 2.0 for i in range(len(frames) - 1)]
    return float(np.mean(diffs))


def calibrate_ptc(flat_frames: Sequence[Sequence[RawPatch]],
                  dark_frames: Sequence[RawPatch] = ()) -> PTCResult:
    """Fit ``var = K * mean + sigma_r^2`` by ordinary least squares.

    ``flat_frames`` holds one group of frames per exposure level. Dark frames,
    when given, contribute one extra zero-signal point.
    """
    groups = [[f.signal() for f in level] for level in flat_frames]
    if len(groups) < 3:
        raise InsufficientDataError(f"need >= 3 exposure levels, got {len(groups)}")
    if any(len(g) < 2 for g in groups):
        raise InsufficientDataError("need >= 2 frames per exposure level")
    if len(dark_frames) == 1:
        raise InsufficientDataError("need >= 2 dark frames")
    if dark_frames:
        groups.append([f.signal() for f in dark_frames])
    means = np.array([np.mean(g) for g in groups])
    variances = np.array([_pair_variance(g) for g in groups])
    if np.ptp(means) == 0:
        raise InsufficientDataError("exposure levels are not distinct")
    design = np.stack([means, np.ones_like(means)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, variances, rcond=None)
    negative = bool(intercept < 0)
    if negative:
        warnings.warn("photon-transfer fit has a negative intercept; sigma_r set to 0",
                      RuntimeWarning, stacklevel=2)
    return PTCResult(float(slope), float(np.sqrt(max(0.0, intercept))), negative, means, variances)
