"""Procedural clean scenes and paired datasets stored as directories of LRF files."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raw import ParseError, ProfileSet, RawPatch, load_raw, save_raw
from .rng import RngStream
from .sensor import physics_noisy

NOISY_SUFFIX = "_noisy"
# rough white-balance spread of R, G1, G2, B under daylight
CHANNEL_GAINS = np.array([0.55, 1.0, 1.0, 0.7])


class DataError(ValueError):
    pass


def procedural_clean(rng: RngStream, n: int, size: int = 32, max_dn: float = 64.0) -> np.ndarray:
    """``n`` clean black-subtracted DN images ``[n, 4, size, size]`` with integer values.

    Each scene is a shaded background plus a few flat shapes and a soft
    sinusoidal texture, scaled into ``[0, max_dn]``.
    """
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((n, 4, size, size))
    for i in range(n):
        r = rng.spawn(i)
        u = r.uniform(12)
        base = 0.1 + 0.5 * u[0]
        scene = base + 0.4 * u[1] * (xx * np.cos(6.283 * u[2]) + yy * np.sin(6.283 * u[2]))
        for k, v in enumerate(r.spawn(1).uniform((4, 5))):
            cy, cx, rad, level, shape = v
            if k >= 1 + int(3 * u[3]):
                break
            if shape < 0.5:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < (0.1 + 0.25 * rad) ** 2
            else:
                mask = (np.abs(yy - cy) < 0.05 + 0.2 * rad) & (np.abs(xx - cx) < 0.05 + 0.2 * level)
            scene = np.where(mask, level, scene)
        scene = scene + 0.08 * u[4] * np.sin(6.283 * (2 + 6 * u[5]) * (xx * u[6] + yy * (1 - u[6])))
        scene = np.clip(scene, 0.0, 1.0)
        gains = CHANNEL_GAINS * (0.85 + 0.3 * u[7:11])
        out[i] = np.rint(np.clip(scene[None] * gains[:, None, None], 0.0, 1.0) * max_dn)
    return out


@dataclass
class PairSet:
    """Clean and noisy images in black-subtracted DN with their ISO tags."""

    names: list[str]
    clean: np.ndarray
    noisy: np.ndarray
    isos: np.ndarray
    black_level: int = 64
    white_level: int = 576

    def __post_init__(self):
        self.isos = np.asarray(self.isos, dtype=np.int64)
        if self.clean.shape != self.noisy.shape or self.clean.ndim != 4 or self.clean.shape[1] != 4:
            raise DataError(f"clean {self.clean.shape} and noisy {self.noisy.shape} must both be [N, 4, H, W]")
        if not len(self.names) == len(self.isos) == len(self.clean):
            raise DataError("names, isos and images differ in length")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def value_range(self) -> float:
        return self.white_level - self.black_level

    def subset(self, idx: Sequence[int] | slice) -> "PairSet":
        if isinstance(idx, slice):
            idx = range(len(self))[idx]
        idx = list(idx)
        return PairSet([self.names[i] for i in idx], self.clean[idx], self.noisy[idx], self.isos[idx],
                       self.black_level, self.white_level)

    def check_profiles(self, profiles: ProfileSet) -> None:
        missing = sorted({int(i) for i in self.isos} - set(profiles.isos()))
        if missing:
            raise DataError(f"no sensor profile for ISO {', '.join(map(str, missing))}")


def oracle_pairs(clean: np.ndarray, isos: Sequence[int], profiles: ProfileSet, rng: RngStream,
                 black_level: int = 64, white_level: int = 576,
                 prefix: str = "img") -> PairSet:
    """Pair each clean image with an oracle-sensor noisy capture at its ISO."""
    value_range = white_level - black_level
    noisy = np.empty_like(clean)
    for i, (y, iso) in enumerate(zip(clean, isos)):
        noisy[i] = np.rint(physics_noisy(y, profiles[iso], value_range, rng.spawn(i)))
    names = [f"{prefix}{i:04d}" for i in range(len(clean))]
    return PairSet(names, clean.copy(), noisy, np.asarray(isos), black_level, white_level)


def _to_patch(signal: np.ndarray, black: int, white: int) -> RawPatch:
    return RawPatch.from_signal(signal, black, white)


def save_pairs(pairs: PairSet, profiles: ProfileSet, directory: str | Path,
               clean_only: bool = False) -> list[Path]:
    pairs.check_profiles(profiles)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name, y, x, iso in zip(pairs.names, pairs.clean, pairs.noisy, pairs.isos):
        prof = profiles[int(iso)]
        save_raw(_to_patch(y, pairs.black_level, pairs.white_level), prof, d / f"{name}.lrf")
        written.append(d / f"{name}.lrf")
        if not clean_only:
            save_raw(_to_patch(x, pairs.black_level, pairs.white_level), prof, d / f"{name}{NOISY_SUFFIX}.lrf")
            written.append(d / f"{name}{NOISY_SUFFIX}.lrf")
    return written


def list_clean(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    files = sorted(p for p in d.glob("*.lrf") if not p.stem.endswith(NOISY_SUFFIX))
    if not files:
        raise DataError(f"no clean .lrf files in {d}")
    return files


def load_images(paths: Sequence[Path]) -> tuple[list[RawPatch], list[int]]:
    patches, isos = [], []
    for p in paths:
        try:
            patch, prof = load_raw(p)
        except ParseError as exc:
            raise DataError(f"{p}: {exc}") from None
        patches.append(patch)
        isos.append(prof.iso)
    return patches, isos


def _stack(patches: list[RawPatch], where: str) -> tuple[np.ndarray, int, int]:
    shapes = {p.shape for p in patches}
    levels = {(p.black_level, p.white_level) for p in patches}
    if len(shapes) != 1 or len(levels) != 1:
        raise DataError(f"{where}: images must share shape and black/white levels")
    black, white = levels.pop()
    return np.stack([p.signal() for p in patches]), black, white


def load_pairs(directory: str | Path, real_directory: str | Path | None = None) -> PairSet:
    """Load ``X.lrf``/``X_noisy.lrf`` pairs; noisy files may live in ``real_directory``."""
    clean_paths = list_clean(directory)
    rdir = Path(real_directory) if real_directory is not None else Path(directory)
    noisy_paths = [rdir / f"{p.stem}{NOISY_SUFFIX}.lrf" for p in clean_paths]
    missing = [p.name for p in noisy_paths if not p.exists()]
    if missing:
        raise DataError(f"missing noisy partner(s): {', '.join(missing)}")
    clean, isos = load_images(clean_paths)
    noisy, nisos = load_images(noisy_paths)
    if isos != nisos:
        raise DataError("clean and noisy files disagree on ISO")
    cy, black, white = _stack(clean, str(directory))
    nx, nb, nw = _stack(noisy, str(rdir))
    if (nb, nw) != (black, white) or cy.shape != nx.shape:
        raise DataError("clean and noisy images differ in shape or levels")
    return PairSet([p.stem for p in clean_paths], cy, nx, np.asarray(isos), black, white)


__all__ = ["DataError", "PairSet", "procedural_clean", "oracle_pairs",
           "save_pairs", "load_pairs", "list_clean", "load_images"]
