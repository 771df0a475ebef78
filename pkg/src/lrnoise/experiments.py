"""Oracle-sensor experiment setups shared by the acceptance suite and the CLI."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PairSet, oracle_pairs, procedural_clean
from .raw import OracleNoiseParams, ProfileSet, SensorProfile
from .rng import RngStream
from .training import TrainConfig

LOW_ISO = 100
HIGH_ISO = 400
BLACK_LEVEL = 64
WHITE_LEVEL = 576  # 512 DN of range, i.e. two integer DN per histogram bin


def oracle_profiles() -> ProfileSet:
    """Two ISO levels of one oracle sensor; ``sigma_r`` is the in-camera read level."""
    return ProfileSet.of([
        SensorProfile(LOW_ISO, 2.0, 2.0, OracleNoiseParams(2.0, 1.0, 1.0)),
        SensorProfile(HIGH_ISO, 2.0, 6.0, OracleNoiseParams(6.0, 1.0, 1.0)),
    ])


@dataclass
class OracleDataset:
    train: PairSet
    val: PairSet
    test: PairSet
    profiles: ProfileSet


def make_oracle_dataset(isos: Sequence[int] = (LOW_ISO,), n_train: int = 512, n_val: int = 16,
                        n_test: int = 64, size: int = 32, seed: int = 0,
                        max_dn: float = 64.0) -> OracleDataset:
    """Procedural clean scenes paired with oracle captures; ISOs alternate across images."""
    profiles = oracle_profiles()
    n = n_train + n_val + n_test
    clean = procedural_clean(RngStream(seed, (1,)), n, size, max_dn)
    tags = [isos[i % len(isos)] for i in range(n)]
    pairs = oracle_pairs(clean, tags, profiles, RngStream(seed, (2,)), BLACK_LEVEL, WHITE_LEVEL)
    idx = np.arange(n)
    return OracleDataset(pairs.subset(idx[:n_train]), pairs.subset(idx[n_train:n_train + n_val]),
                         pairs.subset(idx[n_train + n_val:]), profiles)


# desk-scale budgets sized for a single CPU core
DESK_DENOISER = TrainConfig(epochs=8, lr_init=1e-3, lr_final=1e-5, adam_beta1=0.9)
DESK_NOISE_MODEL = TrainConfig(epochs=6, steps_per_epoch=20, critic_steps_per_gen_step=5)
