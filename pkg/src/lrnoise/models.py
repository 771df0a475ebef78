"""Noise generator, Fourier transformer discriminator, denoiser and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import DimensionError, Tensor
from .raw import RawPatch
from .rng import RngStream


class ArchitectureError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UNetArch:
    levels: int = 3
    base: int = 16
    channels: int = 4
    slope: float = 0.2
    # inputs are multiplied by io_scale and outputs divided by it, keeping
    # activations O(1) when the signal is a small noise map
    io_scale: float = 1.0
    global_residual: bool = False

    def widths(self) -> list[int]:
        return [self.base * 2**i for i in range(self.levels + 1)]


@dataclass(frozen=True)
class FTDArch:
    size: int = 32
    patch_sizes: tuple[int, int, int] = (2, 4, 8)
    embed_dims: tuple[int, int, int] = (16, 16, 32)
    heads: int = 4
    ff_ratio: int = 2
    slope: float = 0.2
    fourier: bool = True
    channels: int = 4

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(self.patch_sizes))
        object.__setattr__(self, "embed_dims", tuple(self.embed_dims))
        p1, p2, p3 = self.patch_sizes
        if self.size < 16 or self.size & (self.size - 1):
            raise ArchitectureError(f"discriminator size must be a power of two >= 16, got {self.size}")
        if p2 != 2 * p1 or p3 != 2 * p2 or self.size % p3:
            raise ArchitectureError(f"patch sizes {self.patch_sizes} must double and divide {self.size}")
        for d in self.block_dims():
            if d % 2 or (d // 2) % self.heads:
                raise ArchitectureError(f"block dim {d} incompatible with {self.heads} heads")

    def block_dims(self) -> tuple[int, int, int]:
        e1, e2, e3 = self.embed_dims
        return e1, e1 + e2, e1 + e2 + e3

    def sequence_lengths(self) -> tuple[int, int, int]:
        return tuple((self.size // p) ** 2 for p in self.patch_sizes)


class Network:
    """Named float64 parameters plus the architecture that produced them."""

    kind: str = ""
    arch: object

    def __init__(self, arch, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params

    def leaves(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad) for k, v in self.params.items()}

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self):
        return type(self)(self.arch, {k: v.copy() for k, v in self.params.items()})

    def zero_(self):
        for v in self.params.values():
            v[...] = 0.0
        return self

    def __eq__(self, other):
        return (type(self) is type(other) and self.arch == other.arch
                and self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params))


# ---------------------------------------------------------------------------
# U-shape networks
# ---------------------------------------------------------------------------

def init_unet(arch: UNetArch, rng: RngStream, out_gain: float = 1.0) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    w = arch.widths()
    blocks.init_conv(p, "stem", arch.channels, w[0], 3, rng)
    for i in range(arch.levels):
        blocks.init_res_block(p, f"enc{i}", w[i], rng)
        blocks.init_conv(p, f"down{i}", w[i], w[i + 1], 2, rng)
    blocks.init_res_block(p, "mid", w[arch.levels], rng)
    for i in reversed(range(arch.levels)):
        blocks.init_conv(p, f"up{i}", w[i + 1], w[i], 2, rng, transpose=True)
        blocks.init_conv(p, f"fuse{i}", 2 * w[i], w[i], 3, rng)
        blocks.init_res_block(p, f"dec{i}", w[i], rng)
    blocks.init_conv(p, "head", w[0], arch.channels, 3, rng, gain=out_gain)
    return p


def unet_forward(arch: UNetArch, p, x: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    b, c, h, wd = x.shape
    if c != arch.channels:
        raise DimensionError(f"expected {arch.channels} channels, got {c}")
    if h % 2**arch.levels or wd % 2**arch.levels:
        raise DimensionError(f"spatial size {(h, wd)} not divisible by 2^{arch.levels}")
    s = arch.slope
    inp = ad.mul(x, arch.io_scale) if arch.io_scale != 1.0 else x
    hcur = ad.leaky_relu(blocks.conv(inp, p, "stem"), s)
    skips = []
    for i in range(arch.levels):
        hcur = blocks.res_block(hcur, p, f"enc{i}", s)
        skips.append(hcur)
        hcur = ad.leaky_relu(blocks.conv(hcur, p, f"down{i}", stride=2, pad=0), s)
    hcur = blocks.res_block(hcur, p, "mid", s)
    taps = {"bottleneck": hcur}
    for i in reversed(range(arch.levels)):
        up = ad.transpose_conv2d(hcur, p[f"up{i}.w"], p[f"up{i}.b"], stride=2)
        hcur = ad.leaky_relu(up, s)
        hcur = ad.leaky_relu(blocks.conv(ad.concat([hcur, skips[i]], axis=1), p, f"fuse{i}"), s)
        hcur = blocks.res_block(hcur, p, f"dec{i}", s)
        taps[f"dec{i}"] = hcur
    out = blocks.conv(hcur, p, "head")
    if arch.io_scale != 1.0:
        out = ad.mul(out, 1.0 / arch.io_scale)
    if arch.global_residual:
        out = ad.add(x, out)
    return out, taps


class Generator(Network):
    """Maps an initial Gaussian noise map to signal-independent noise."""

    kind = "generator"

    @classmethod
    def create(cls, rng: RngStream, arch: UNetArch | None = None) -> "Generator":
        arch = arch or UNetArch(io_scale=100.0)
        return cls(arch, init_unet(arch, rng, out_gain=0.5))

    def forward(self, n_init: Tensor, p=None) -> Tensor:
        return unet_forward(self.arch, p or self.leaves(), n_init)[0]


class Denoiser(Network):
    kind = "denoiser"

    @classmethod
    def create(cls, rng: RngStream, arch: UNetArch | None = None) -> "Denoiser":
        arch = arch or UNetArch(io_scale=10.0, global_residual=True)
        return cls(arch, init_unet(arch, rng, out_gain=0.1))

    def forward(self, noisy: Tensor, p=None) -> tuple[Tensor, dict[str, Tensor]]:
        return unet_forward(self.arch, p or self.leaves(), noisy)


def generator_forward(gen: Generator, n_init: Tensor, p=None) -> Tensor:
    return gen.forward(n_init, p)


def denoiser_forward(den: Denoiser, noisy, p=None):
    """Denoise a ``[B, 4, H, W]`` tensor or a normalized RawPatch; returns (output, feature taps)."""
    if isinstance(noisy, RawPatch):
        if not noisy.normalized:
            raise ValueError("denoiser expects a normalized patch")
        out, taps = den.forward(Tensor(noisy.data[None]), p)
        clean = np.clip(out.data[0], 0.0, 1.0)
        return RawPatch(clean, noisy.black_level, noisy.white_level, normalized=True), taps
    return den.forward(noisy, p)


# ---------------------------------------------------------------------------
# Discriminator
# ---------------------------------------------------------------------------

class Discriminator(Network):
    """Multi-scale transformer critic; Fourier blocks unless ``arch.fourier`` is False."""

    kind = "ftd"

    @classmethod
    def create(cls, rng: RngStream, arch: FTDArch | None = None) -> "Discriminator":
        arch = arch or FTDArch()
        p: dict[str, np.ndarray] = {}
        dims = arch.block_dims()
        for s, (patch, e) in enumerate(zip(arch.patch_sizes, arch.embed_dims), 1):
            blocks.init_patchify(p, f"embed{s}", patch, e, rng, arch.channels)
        p["pos"] = rng.normal((arch.sequence_lengths()[0], arch.embed_dims[0]), 0.02)
        for s, d in enumerate(dims, 1):
            if arch.fourier:
                blocks.init_fourier_block(p, f"block{s}", d, arch.heads, arch.ff_ratio, rng)
            else:
                blocks.init_transformer(p, f"block{s}", d, arch.heads, arch.ff_ratio, rng)
        blocks.init_transformer(p, "final", dims[2], arch.heads, arch.ff_ratio, rng)
        blocks.init_linear(p, "head", dims[2], 1, rng)
        return cls(arch, p)

    def _block(self, seq, p, name):
        a = self.arch
        if a.fourier:
            return blocks.fourier_transformer_block(seq, p, name, a.heads, a.slope)
        return blocks.transformer_block(seq, p, name, a.heads, a.slope)

    def forward(self, x: Tensor, p=None, trace: list | None = None) -> Tensor:
        """Scores ``[B]`` for a ``[B, 4, size, size]`` batch."""
        a = self.arch
        p = p or self.leaves()
        if x.ndim != 4 or x.shape[1:] != (a.channels, a.size, a.size):
            raise DimensionError(f"discriminator expects [B, {a.channels}, {a.size}, {a.size}], got {x.shape}")
        seqs = [blocks.patchify(x, p, f"embed{s}", patch)
                for s, patch in enumerate(a.patch_sizes, 1)]
        seq = blocks.TokenSequence(ad.add(seqs[0].tokens, p["pos"]), seqs[0].grid)
        for s in range(3):
            if s:
                seq = blocks.seq_downsample(seq, 2)
                seq = blocks.TokenSequence(ad.concat([seq.tokens, seqs[s].tokens], axis=-1), seq.grid)
            if trace is not None:
                trace.append(seq.length)
            seq = self._block(seq, p, f"block{s + 1}")
        seq = blocks.transformer_block(seq, p, "final", a.heads, a.slope)
        pooled = ad.reduce_mean(seq.tokens, axis=1)
        return ad.reshape(blocks.linear(pooled, p, "head"), (x.shape[0],))


def ftd_forward(disc: Discriminator, x, p=None) -> Tensor:
    if isinstance(x, RawPatch):
        if not x.normalized:
            raise ValueError("discriminator expects a normalized patch")
        x = Tensor(x.data[None])
    return disc.forward(x, p)


# ---------------------------------------------------------------------------
# Initial noise and composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitNoiseSpec:
    """``sigma_r`` is expressed in the units of the network domain (normalized)."""

    sigma_r: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.sigma_r < 0:
            raise ValueError("sigma_r must be >= 0")


def sample_init_noise(spec: InitNoiseSpec, rng: RngStream) -> Tensor:
    """Per-pixel iid Normal(0, sigma_r^2) map."""
    return Tensor(rng.normal(spec.shape, spec.sigma_r))


def compose_noisy(y_hat, n_indep):
    """Pseudo-noisy image ``clip(y_hat + n_indep, 0, 1)`` in the normalized domain."""
    if isinstance(y_hat, RawPatch):
        if not y_hat.normalized:
            raise ValueError("compose_noisy works in the normalized domain")
        n = n_indep.data if isinstance(n_indep, Tensor) else np.asarray(n_indep)
        if n.shape != y_hat.shape:
            raise DimensionError(f"compose_noisy: shapes {y_hat.shape} and {n.shape}")
        return y_hat.with_data(np.clip(y_hat.data + n, 0.0, 1.0))
    y = ad.as_tensor(y_hat)
    n = ad.as_tensor(n_indep)
    if y.shape != n.shape:
        raise DimensionError(f"compose_noisy: shapes {y.shape} and {n.shape}")
    return ad.clip(ad.add(y, n), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"LRDM"
VERSION = 1
KIND_TAGS = {"generator": 1, "denoiser": 2, "ftd": 3, "state": 4}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
_CLASSES = {"generator": Generator, "denoiser": Denoiser, "ftd": Discriminator}
_ARCHS = {"generator": UNetArch, "denoiser": UNetArch, "ftd": FTDArch}
_REC = struct.Struct("<4sHHI")


@dataclass
class Record:
    kind: str
    meta: dict
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def network_record(net: Network, **extra) -> Record:
    meta = {"arch": asdict(net.arch), "names": list(net.params), **extra}
    flat = np.concatenate([v.ravel() for v in net.params.values()]) if net.params else np.zeros(0)
    return Record(net.kind, meta, flat)


def encode_records(records: Iterable[Record]) -> bytes:
    out = bytearray()
    for rec in records:
        meta = json.dumps(rec.meta, sort_keys=True).encode()
        vals = np.ascontiguousarray(rec.values, dtype="<f8")
        out += _REC.pack(MAGIC, VERSION, KIND_TAGS[rec.kind], len(meta)) + meta
        out += struct.pack("<Q", vals.size) + vals.tobytes()
    return bytes(out)


def decode_records(buf: bytes) -> list[Record]:
    recs = []
    off = 0
    while off < len(buf):
        if len(buf) - off < _REC.size:
            raise CheckpointError(f"truncated record header at byte {off}")
        magic, version, tag, nmeta = _REC.unpack_from(buf, off)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic at byte {off}")
        if version != VERSION:
            raise CheckpointError(f"unknown checkpoint version {version} at byte {off + 4}")
        if tag not in _TAG_KINDS:
            raise CheckpointError(f"unknown record kind {tag} at byte {off + 6}")
        off += _REC.size
        try:
            meta = json.loads(buf[off:off + nmeta].decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CheckpointError(f"corrupt metadata block at byte {off}") from None
        off += nmeta
        if len(buf) - off < 8:
            raise CheckpointError(f"truncated value count at byte {off}")
        (n,) = struct.unpack_from("<Q", buf, off)
        off += 8
        if len(buf) - off < 8 * n:
            raise CheckpointError(f"truncated weight payload at byte {off}")
        vals = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        recs.append(Record(_TAG_KINDS[tag], meta, vals))
    return recs


def _arch_from_meta(kind: str, meta: dict):
    a = dict(meta["arch"])
    try:
        return _ARCHS[kind](**a)
    except TypeError as exc:
        raise CheckpointError(f"bad architecture block: {exc}") from None


def network_from_record(rec: Record, expected_arch=None) -> Network:
    if rec.kind not in _CLASSES:
        raise CheckpointError(f"record of kind {rec.kind!r} is not a network")
    arch = _arch_from_meta(rec.kind, rec.meta)
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureError(f"checkpoint architecture {arch} does not match {expected_arch}")
    cls = _CLASSES[rec.kind]
    template = cls.create(RngStream(0), arch)
    if list(template.params) != rec.meta.get("names"):
        raise ArchitectureError("parameter layout differs from the declared architecture")
    total = template.num_params()
    if rec.values.size != total:
        raise CheckpointError(f"expected {total} weights, found {rec.values.size}")
    params, off = {}, 0
    for k, v in template.params.items():
        params[k] = rec.values[off:off + v.size].reshape(v.shape).copy()
        off += v.size
    return cls(arch, params)


def save_params(net: Network, path: str | Path, **extra) -> None:
    Path(path).write_bytes(encode_records([network_record(net, **extra)]))


def load_params(path: str | Path, kind: str | None = None, expected_arch=None) -> Network:
    recs = [r for r in decode_records(Path(path).read_bytes()) if r.kind in _CLASSES]
    if kind is not None:
        recs = [r for r in recs if r.kind == kind]
    if not recs:
        raise CheckpointError(f"no {kind or 'network'} record in {path}")
    return network_from_record(recs[0], expected_arch)
