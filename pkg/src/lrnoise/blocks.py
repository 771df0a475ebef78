"""Network building blocks.

Parameters live in flat ordered ``dict[str, np.ndarray]`` maps keyed by
dotted names. ``init_*`` functions append entries; forward functions read
the matching :class:`Tensor` leaves from a mapping with the same keys.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .rng import RngStream

Params = dict[str, np.ndarray]
Leaves = Mapping[str, Tensor]


@dataclass
class TokenSequence:
    tokens: Tensor  # [batch, L, dim]
    grid: tuple[int, int]

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise DimensionError(f"tokens must be [batch, L, dim], got {self.tokens.shape}")
        h, w = self.grid
        if h * w != self.tokens.shape[1]:
            raise DimensionError(f"grid {self.grid} does not match sequence length {self.tokens.shape[1]}")

    @property
    def dim(self) -> int:
        return self.tokens.shape[2]

    @property
    def length(self) -> int:
        return self.tokens.shape[1]


# -- dense / conv layers ------------------------------------------------------

def init_linear(params: Params, name: str, d_in: int, d_out: int, rng: RngStream,
                std: float = 0.02, zero: bool = False) -> None:
    params[f"{name}.w"] = np.zeros((d_in, d_out)) if zero else rng.normal((d_in, d_out), std)
    params[f"{name}.b"] = np.zeros(d_out)


def linear(x: Tensor, p: Leaves, name: str) -> Tensor:
    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def init_conv(params: Params, name: str, c_in: int, c_out: int, k: int, rng: RngStream,
              gain: float = 1.0, transpose: bool = False) -> None:
    # He-style init for leaky-relu stacks
    std = gain * np.sqrt(2.0 / (c_in * k * k))
    shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
    params[f"{name}.w"] = rng.normal(shape, std)
    params[f"{name}.b"] = np.zeros(c_out)


def conv(x: Tensor, p: Leaves, name: str, stride: int = 1, pad: int | None = None) -> Tensor:
    w = p[f"{name}.w"]
    if pad is None:
        pad = w.shape[-1] // 2
    return ad.conv2d(x, w, p[f"{name}.b"], stride=stride, pad=pad)


def init_res_block(params: Params, name: str, width: int, rng: RngStream) -> None:
    init_conv(params, f"{name}.c1", width, width, 3, rng)
    init_conv(params, f"{name}.c2", width, width, 3, rng, gain=0.5)


def res_block(x: Tensor, p: Leaves, name: str, slope: float) -> Tensor:
    h = ad.leaky_relu(conv(x, p, f"{name}.c1"), slope)
    return ad.add(x, conv(h, p, f"{name}.c2"))


# -- tokens ---------------------------------------------------------------------

def init_patchify(params: Params, name: str, patch: int, dim: int, rng: RngStream,
                  channels: int = 4) -> None:
    init_linear(params, name, channels * patch * patch, dim, rng)


def patch_tokens(x: Tensor, patch: int) -> tuple[Tensor, tuple[int, int]]:
    """Flatten ``patch x patch`` blocks of ``x[B, C, H, W]`` in (c, y, x) order."""
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise DimensionError(f"patchify: {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    t = ad.reshape(x, (b, c, gh, patch, gw, patch))
    t = ad.transpose(t, (0, 2, 4, 1, 3, 5))
    return ad.reshape(t, (b, gh * gw, c * patch * patch)), (gh, gw)


def patchify(x, p: Leaves, name: str, patch: int) -> TokenSequence:
    """Embed non-overlapping patches of a ``[B, 4, H, W]`` batch (or a normalized RawPatch)."""
    from .raw import RawPatch
    if isinstance(x, RawPatch):
        if not x.normalized:
            raise ValueError("patchify expects a normalized patch")
        x = Tensor(x.data[None])
    flat, grid = patch_tokens(x, patch)
    return TokenSequence(linear(flat, p, name), grid)


def tokens_to_maps(seq: TokenSequence) -> Tensor:
    b, n, d = seq.tokens.shape
    h, w = seq.grid
    return ad.reshape(ad.transpose(seq.tokens, (0, 2, 1)), (b, d, h, w))


def maps_to_tokens(x: Tensor) -> TokenSequence:
    b, d, h, w = x.shape
    return TokenSequence(ad.transpose(ad.reshape(x, (b, d, h * w)), (0, 2, 1)), (h, w))


def seq_downsample(seq: TokenSequence, k: int) -> TokenSequence:
    h, w = seq.grid
    if h % k or w % k:
        raise DimensionError(f"seq_downsample: grid {seq.grid} not divisible by {k}")
    return maps_to_tokens(ad.avg_pool2d(tokens_to_maps(seq), k))


# -- transformer blocks ---------------------------------------------------------

def init_transformer(params: Params, name: str, dim: int, heads: int, ff_ratio: int,
                     rng: RngStream, std: float = 0.02) -> None:
    if dim % heads:
        raise DimensionError(f"transformer: dim {dim} not divisible by {heads} heads")
    params[f"{name}.ln1.g"] = np.ones(dim)
    params[f"{name}.ln1.b"] = np.zeros(dim)
    init_linear(params, f"{name}.qkv", dim, 3 * dim, rng, std)
    init_linear(params, f"{name}.proj", dim, dim, rng, std)
    params[f"{name}.ln2.g"] = np.ones(dim)
    params[f"{name}.ln2.b"] = np.zeros(dim)
    init_linear(params, f"{name}.ff1", dim, ff_ratio * dim, rng, std)
    init_linear(params, f"{name}.ff2", ff_ratio * dim, dim, rng, std)


def attention(seq: TokenSequence, p: Leaves, name: str, heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention on pre-normed tokens; returns (output, attention weights)."""
    x = seq.tokens
    b, n, d = x.shape
    if d % heads:
        raise DimensionError(f"attention: dim {d} not divisible by {heads} heads")
    dh = d // heads
    q, k, v = ad.split(linear(x, p, f"{name}.qkv"), [d, d, d], axis=-1)

    def heads_first(t):
        return ad.transpose(ad.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))
    # scaling q instead of the [n, n] scores saves a full pass over the score matrix
    q = heads_first(ad.mul(q, 1.0 / np.sqrt(dh)))
    k, v = heads_first(k), heads_first(v)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    weights = ad.softmax(scores, axis=-1)
    out = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (b, n, d))
    return linear(out, p, f"{name}.proj"), weights


def transformer_block(seq: TokenSequence, p: Leaves, name: str, heads: int,
                      slope: float = 0.2) -> TokenSequence:
    """Pre-norm self-attention and feed-forward, each with a residual connection."""
    x = seq.tokens
    h = ad.layer_norm(x, p[f"{name}.ln1.g"], p[f"{name}.ln1.b"])
    attn, _ = attention(TokenSequence(h, seq.grid), p, name, heads)
    x = ad.add(x, attn)
    h = ad.layer_norm(x, p[f"{name}.ln2.g"], p[f"{name}.ln2.b"])
    h = ad.leaky_relu(linear(h, p, f"{name}.ff1"), slope)
    x = ad.add(x, linear(h, p, f"{name}.ff2"))
    return TokenSequence(x, seq.grid)


def init_fourier_block(params: Params, name: str, dim: int, heads: int, ff_ratio: int,
                       rng: RngStream, std: float = 0.02) -> None:
    if dim % 2:
        raise DimensionError(f"fourier block needs an even dim, got {dim}")
    half = dim // 2
    init_transformer(params, f"{name}.spec", 2 * half, heads, ff_ratio, rng, std)
    init_linear(params, f"{name}.spec_out", 2 * half, 2 * half, rng, std)
    init_transformer(params, f"{name}.spat", half, heads, ff_ratio, rng, std)
    init_linear(params, f"{name}.spat2spec", half, half, rng, zero=True)
    init_linear(params, f"{name}.spec2spat", half, half, rng, zero=True)


def fourier_transformer_block(seq: TokenSequence, p: Leaves, name: str, heads: int,
                              slope: float = 0.2) -> TokenSequence:
    """Spectral path on one channel half, spatial path on the other, then cross exchange.

    The spectral path transforms each channel over the token grid, runs a
    transformer on the frequency bins with (re, im) stacked as channels,
    projects, and returns to the spatial domain through a residual.
    """
    d = seq.dim
    if d % 2:
        raise DimensionError(f"fourier block needs an even dim, got {d}")
    half = d // 2
    x_spec, x_spat = ad.split(seq.tokens, [half, half], axis=-1)

    maps = tokens_to_maps(TokenSequence(x_spec, seq.grid))
    re, im = ad.dft2(maps)
    spec = maps_to_tokens(ad.concat([re, im], axis=1))
    spec = transformer_block(spec, p, f"{name}.spec", heads, slope)
    spec = TokenSequence(linear(spec.tokens, p, f"{name}.spec_out"), spec.grid)
    re2, im2 = ad.split(tokens_to_maps(spec), [half, half], axis=1)
    back = maps_to_tokens(ad.idft2(re2, im2)).tokens
    s = ad.add(x_spec, back)

    t = transformer_block(TokenSequence(x_spat, seq.grid), p, f"{name}.spat", heads, slope).tokens

    s_out = ad.add(s, linear(t, p, f"{name}.spat2spec"))
    t_out = ad.add(t, linear(s, p, f"{name}.spec2spat"))
    return TokenSequence(ad.concat([s_out, t_out], axis=-1), seq.grid)
