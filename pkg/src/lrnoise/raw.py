"""Raw Bayer patches, sensor profiles and the LRF container.

A :class:`RawPatch` always holds a packed 4-channel image in RGGB order.
Unnormalized patches carry DN values including the black level; normalized
patches hold black-subtracted values scaled to [0, 1].
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np


class DimensionError(ValueError):
    pass


class StateError(ValueError):
    pass


class ParseError(ValueError):
    """Malformed container; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BayerPattern(enum.IntEnum):
    RGGB = 0
    BGGR = 1
    GRBG = 2
    GBRG = 3


# (row, col) of R, G1, G2, B inside the 2x2 cell, per pattern.
_SITES = {
    BayerPattern.RGGB: ((0, 0), (0, 1), (1, 0), (1, 1)),
    BayerPattern.BGGR: ((1, 1), (0, 1), (1, 0), (0, 0)),
    BayerPattern.GRBG: ((0, 1), (0, 0), (1, 1), (1, 0)),
    BayerPattern.GBRG: ((1, 0), (0, 0), (1, 1), (0, 1)),
}


@dataclass(frozen=True)
class OracleNoiseParams:
    sigma_read: float = 0.0
    sigma_row: float = 0.0
    quant_step: float = 0.0

    def __post_init__(self):
        if min(self.sigma_read, self.sigma_row, self.quant_step) < 0:
            raise ValueError(f"oracle noise parameters must be >= 0, got {self}")

    @property
    def total_variance(self) -> float:
        """Variance of the oracle signal-independent noise in DN^2."""
        return self.sigma_read**2 + self.sigma_row**2 + self.quant_step**2 / 12.0


@dataclass(frozen=True)
class SensorProfile:
    iso: int
    gain_K: float
    sigma_r: float
    oracle: OracleNoiseParams | None = None

    def __post_init__(self):
        if not self.gain_K > 0:
            raise ValueError(f"gain_K must be > 0, got {self.gain_K}")
        if self.sigma_r < 0:
            raise ValueError(f"sigma_r must be >= 0, got {self.sigma_r}")


@dataclass(frozen=True, eq=False)
class RawPatch:
    data: np.ndarray
    black_level: int
    white_level: int
    normalized: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != 4 or data.shape[1] < 1 or data.shape[2] < 1:
            raise DimensionError(f"RawPatch data must be [4, H, W], got {data.shape}")
        if not self.black_level < self.white_level:
            raise ValueError("black_level must be < white_level")
        hi = 1.0 if self.normalized else float(self.white_level)
        if data.size and (data.min() < 0 or data.max() > hi):
            raise ValueError(f"RawPatch values outside [0, {hi}]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def value_range(self) -> int:
        return self.white_level - self.black_level

    def signal(self) -> np.ndarray:
        """Black-level-subtracted DN values (may be negative near black)."""
        if self.normalized:
            return self.data * self.value_range
        return self.data - self.black_level

    @classmethod
    def from_signal(cls, signal: np.ndarray, black_level: int, white_level: int) -> "RawPatch":
        """Build an unnormalized patch from black-subtracted DN, saturating at the white level."""
        dn = np.clip(np.asarray(signal, dtype=np.float64) + black_level, 0, white_level)
        return cls(dn, black_level, white_level)

    def with_data(self, data: np.ndarray) -> "RawPatch":
        return replace(self, data=data)

    def __eq__(self, other):
        if not isinstance(other, RawPatch):
            return NotImplemented
        return (
            self.black_level == other.black_level
            and self.white_level == other.white_level
            and self.normalized == other.normalized
            and np.array_equal(self.data, other.data)
        )


def pack_bayer(mosaic: np.ndarray, pattern: BayerPattern | str = BayerPattern.RGGB,
               black_level: int = 0, white_level: int = 65535) -> RawPatch:
    mosaic = np.asarray(mosaic)
    if mosaic.ndim != 2 or mosaic.shape[0] % 2 or mosaic.shape[1] % 2:
        raise DimensionError(f"mosaic must be 2D with even dimensions, got {mosaic.shape}")
    pattern = BayerPattern[pattern] if isinstance(pattern, str) else BayerPattern(pattern)
    chans = [mosaic[r::2, c::2] for r, c in _SITES[pattern]]
    return RawPatch(np.stack(chans), black_level, white_level)


def unpack_bayer(patch: RawPatch, pattern: BayerPattern | str = BayerPattern.RGGB) -> np.ndarray:
    pattern = BayerPattern[pattern] if isinstance(pattern, str) else BayerPattern(pattern)
    _, h, w = patch.shape
    mosaic = np.empty((2 * h, 2 * w), dtype=patch.data.dtype)
    for ch, (r, c) in enumerate(_SITES[pattern]):
        mosaic[r::2, c::2] = patch.data[ch]
    return mosaic


def normalize(patch: RawPatch) -> RawPatch:
    if patch.normalized:
        raise StateError("patch is already normalized")
    out = np.clip((patch.data - patch.black_level) / patch.value_range, 0.0, 1.0)
    return RawPatch(out, patch.black_level, patch.white_level, normalized=True)


def denormalize(patch: RawPatch) -> RawPatch:
    if not patch.normalized:
        raise StateError("patch is not normalized")
    return RawPatch(patch.data * patch.value_range + patch.black_level,
                    patch.black_level, patch.white_level)


# ---------------------------------------------------------------------------
# LRF container
# ---------------------------------------------------------------------------

MAGIC = b"LRF1"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIHHIdd")
HEADER_SIZE = _HEADER.size  # 40 bytes


def encode_lrf(patch: RawPatch, profile: SensorProfile,
               pattern: BayerPattern = BayerPattern.RGGB) -> bytes:
    if patch.normalized:
        patch = denormalize(patch)
    _, h, w = patch.shape
    dn = np.rint(patch.data)
    if dn.min() < 0 or dn.max() > 65535:
        raise ValueError("DN values do not fit in u16")
    # payload channel order follows the declared pattern's site order
    order = _channel_permutation(pattern)
    payload = dn.astype("<u2")[list(order)]
    header = _HEADER.pack(MAGIC, VERSION, int(pattern), h, w, patch.black_level,
                          patch.white_level, profile.iso, profile.gain_K, profile.sigma_r)
    return header + payload.tobytes()


def decode_lrf(buf: bytes) -> tuple[RawPatch, SensorProfile]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ParseError("bad magic, expected b'LRF1'", 0)
    if len(buf) < HEADER_SIZE:
        raise ParseError("truncated header", len(buf))
    _, version, pcode, h, w, black, white, iso, gain, sigma_r = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise ParseError(f"unknown version {version}", 4)
    try:
        pattern = BayerPattern(pcode)
    except ValueError:
        raise ParseError(f"unknown bayer pattern code {pcode}", 6) from None
    if h < 1 or w < 1:
        raise ParseError("zero image dimension", 8)
    if not black < white:
        raise ParseError("black level must be below white level", 16)
    n = 4 * h * w
    expected = HEADER_SIZE + 2 * n
    if len(buf) < expected:
        raise ParseError(f"truncated payload, expected {2 * n} bytes", len(buf))
    if len(buf) > expected:
        raise ParseError("trailing bytes after payload", expected)
    raw = np.frombuffer(buf, dtype="<u2", count=n, offset=HEADER_SIZE).reshape(4, h, w)
    if raw.max() > white:
        raise ParseError("pixel value above white level", HEADER_SIZE)
    order = _channel_permutation(pattern)
    data = np.empty((4, h, w), dtype=np.float64)
    data[list(order)] = raw
    try:
        profile = SensorProfile(int(iso), float(gain), float(sigma_r))
    except ValueError as exc:
        raise ParseError(str(exc), 24) from None
    return RawPatch(data, int(black), int(white)), profile


def _channel_permutation(pattern: BayerPattern) -> tuple[int, ...]:
    """Map payload channel index -> RGGB channel index.

    Payload channels are stored in raster order of the 2x2 cell
    (top-left, top-right, bottom-left, bottom-right).
    """
    sites = _SITES[pattern]
    raster = ((0, 0), (0, 1), (1, 0), (1, 1))
    return tuple(sites.index(rc) for rc in raster)


def save_raw(patch: RawPatch, profile: SensorProfile, path: str | Path) -> None:
    Path(path).write_bytes(encode_lrf(patch, profile))


def load_raw(path: str | Path) -> tuple[RawPatch, SensorProfile]:
    return decode_lrf(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Profile sidecar
# ---------------------------------------------------------------------------

@dataclass
class ProfileSet:
    profiles: dict[int, SensorProfile] = field(default_factory=dict)

    def add(self, profile: SensorProfile) -> None:
        if profile.iso in self.profiles:
            raise ValueError(f"duplicate profile for ISO {profile.iso}")
        self.profiles[profile.iso] = profile

    def __getitem__(self, iso: int) -> SensorProfile:
        try:
            return self.profiles[iso]
        except KeyError:
            raise KeyError(f"no profile for ISO {iso}") from None

    def __contains__(self, iso) -> bool:
        return iso in self.profiles

    def __iter__(self):
        return iter(sorted(self.profiles.values(), key=lambda p: p.iso))

    def __len__(self) -> int:
        return len(self.profiles)

    def isos(self) -> list[int]:
        return sorted(self.profiles)

    @classmethod
    def of(cls, profiles: Iterable[SensorProfile]) -> "ProfileSet":
        out = cls()
        for p in profiles:
            out.add(p)
        return out


def parse_profiles(text: str) -> ProfileSet:
    """Parse ``iso gain_K sigma_r [sigma_read sigma_row quant_step]`` lines."""
    out = ProfileSet()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 6):
            raise ValueError(f"line {lineno}: expected 3 or 6 fields, got {len(parts)}")
        try:
            iso = int(parts[0])
            nums = [float(v) for v in parts[1:]]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field") from None
        oracle = OracleNoiseParams(*nums[2:]) if len(nums) == 5 else None
        try:
            out.add(SensorProfile(iso, nums[0], nums[1], oracle))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def format_profiles(profiles: ProfileSet) -> str:
    lines = []
    for p in profiles:
        fields = [str(p.iso), repr(p.gain_K), repr(p.sigma_r)]
        if p.oracle is not None:
            fields += [repr(p.oracle.sigma_read), repr(p.oracle.sigma_row), repr(p.oracle.quant_step)]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def load_profiles(path: str | Path) -> ProfileSet:
    return parse_profiles(Path(path).read_text())


def save_profiles(profiles: ProfileSet, path: str | Path) -> None:
    Path(path).write_text(format_profiles(profiles))


def write_pgm(patch: RawPatch, path: str | Path, ratio: float = 1.0, gamma: float = 2.2) -> None:
    """8-bit grayscale preview of the green-average channel."""
    norm = patch if patch.normalized else normalize(patch)
    g = 0.5 * (norm.data[1] + norm.data[2])
    img = np.clip(g * ratio, 0.0, 1.0) ** (1.0 / gamma)
    px = np.rint(img * 255).astype(np.uint8)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + px.tobytes())
