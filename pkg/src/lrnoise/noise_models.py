"""Uniform ``synthesize`` adapters over every noise source that gets evaluated."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairSet
from .models import Generator
from .raw import ProfileSet, SensorProfile
from .rng import RngStream
from .sensor import BaselineModel, baseline_noisy, physics_noisy
from .training import synthesize_with_generator


@dataclass
class ReplayModel:
    """Returns the real noisy image itself; its AKLD is zero by construction."""

    name: str = "oracle-replay"

    def synthesize(self, clean, profile, value_range, rng, real=None):
        if real is None:
            raise ValueError("replay needs the real noisy image")
        return np.asarray(real, dtype=np.float64)


@dataclass
class PhysicsModel:
    """Fresh draws from the oracle sensor (needs oracle parameters in the profile)."""

    name: str = "oracle"

    def synthesize(self, clean, profile, value_range, rng, real=None):
        return physics_noisy(clean, profile, value_range, rng)


@dataclass
class BaselineNoiseModel:
    kind: BaselineModel
    sigma_r: dict[int, float] | None = None  # per-ISO override of the profile sigma_r
    name: str = ""

    def __post_init__(self):
        self.kind = BaselineModel(self.kind)
        self.name = self.name or self.kind.value

    def _profile(self, profile: SensorProfile) -> SensorProfile:
        if self.sigma_r is None:
            return profile
        return SensorProfile(profile.iso, profile.gain_K, self.sigma_r[profile.iso])

    def synthesize(self, clean, profile, value_range, rng, real=None):
        return baseline_noisy(clean, self._profile(profile), self.kind, value_range, rng)


@dataclass
class LearnedModel:
    generator: Generator
    name: str = "learned"
    sigma_r: dict[int, float] | None = None  # conditioning override, e.g. swapped ISOs

    def synthesize(self, clean, profile, value_range, rng, real=None):
        sig = profile.sigma_r if self.sigma_r is None else self.sigma_r[profile.iso]
        return synthesize_with_generator(self.generator, clean, profile.gain_K, sig, value_range, rng)


def fit_read_sigma(pairs: PairSet, profiles: ProfileSet) -> dict[int, float]:
    """Per-ISO moment fit of the signal-independent std from ``E[r^2] = K Y + sigma^2``."""
    out = {}
    for iso in sorted({int(i) for i in pairs.isos}):
        sel = pairs.isos == iso
        y = pairs.clean[sel]
        r = pairs.noisy[sel] - y
        var = float(np.mean(r * r - profiles[iso].gain_K * y))
        out[iso] = float(np.sqrt(max(var, 0.0)))
    return out


def moment_fit_baselines(pairs: PairSet, profiles: ProfileSet) -> tuple[BaselineNoiseModel, BaselineNoiseModel]:
    """AWGN and Poisson-Gaussian baselines whose read level is fitted on ``pairs``."""
    sig = fit_read_sigma(pairs, profiles)
    return (BaselineNoiseModel(BaselineModel.AWGN, sig, "awgn"),
            BaselineNoiseModel(BaselineModel.POISSON_GAUSSIAN, sig, "pg"))


def synthesize_pairs(model, clean: PairSet, profiles: ProfileSet, rng: RngStream) -> PairSet:
    """New pair set with the noisy side drawn from ``model`` (rounded to integer DN)."""
    vr = clean.value_range
    noisy = np.empty_like(clean.clean)
    for i in range(len(clean)):
        prof = profiles[int(clean.isos[i])]
        noisy[i] = np.clip(np.rint(model.synthesize(clean.clean[i], prof, vr, rng.spawn(i),
                                                    real=clean.noisy[i])), 0.0, vr)
    return PairSet(list(clean.names), clean.clean.copy(), noisy, clean.isos.copy(),
                   clean.black_level, clean.white_level)
