"""Differentiable ops.

Elementwise ops broadcast only along leading axes: an operand's shape must
equal the other's shape or a suffix of it (scalars included).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _kernels
from .tensor import DimensionError, Tensor, as_tensor, make


def _bcast_shape(op: str, sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb} (only leading-axis broadcast)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bcast_shape("add", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bcast_shape("sub", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bcast_shape("mul", a.shape, b.shape)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return make(a.data * b.data, (a, b), bw, "mul")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    return make(np.where(pos, x.data, slope * x.data), (x,),
                lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(x.data)
    return make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return make(y, (x,), lambda g: (g / (2.0 * y),), "sqrt")


def square(x: Tensor) -> Tensor:
    return make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- reductions -----------------------------------------------------------------

def _axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)
    return make(out, (x,), bw, "reduce_sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)
    return make(out, (x,), bw, "reduce_mean")


def l2_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis`` (all axes by default)."""
    axes = _axes(axis, x.ndim)
    norm = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(norm > 0, gk / norm, 0.0)
        return (scale * x.data,)
    out = norm if keepdims else np.squeeze(norm, axis=axes)
    return make(out, (x,), bw, "l2_norm")


# -- shape ops ------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def broadcast(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` along new leading axes."""
    shape = tuple(shape)
    if _bcast_shape("broadcast", shape, x.shape) != shape:
        raise DimensionError(f"broadcast: {x.shape} is not a suffix of {shape}")
    return make(np.broadcast_to(x.data, shape).copy(), (x,),
                lambda g: (_unbroadcast(g, x.shape),), "broadcast")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))
    return make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not sum to {x.shape[ax]}")
    outs = []
    start = 0
    for size in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + size)
        sl = tuple(sl)

        def bw(g, sl=sl):
            full = np.zeros(x.shape)
            full[sl] = g
            return (full,)
        outs.append(make(x.data[sl], (x,), bw, "split"))
        start += size
    return outs


# -- linear algebra ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product; a 2D operand broadcasts over the other's leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch shapes {a.shape[:-2]} and {b.shape[:-2]} differ")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return make(a.data @ b.data, (a, b), bw, "matmul")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[N, C, Hp, Wp] -> strided view [N, C, Ho, Wo, kh, kw]."""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N, C, H, W]`` with ``w[O, C, kh, kw]``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} and kernel {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"conv2d: bias {b.shape} for {w.shape[0]} output channels")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    cols = _windows(_pad(x.data, pad), kh, kw, stride)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[:, None, None]
    ho, wo = out.shape[2:]

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
            full = _kernels.col2im(gcols, hp, wp, stride)
            gx = full[:, :, pad:pad + h, pad:pad + wd] if pad else full
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb
    parents = (x, w) if b is None else (x, w, b)
    return make(np.ascontiguousarray(out), parents, bw, "conv2d")


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` w.r.t. its input; ``w`` is ``[C_in, C_out, kh, kw]``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"transpose_conv2d: input {x.shape} and kernel {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"transpose_conv2d: bias {b.shape} for {w.shape[1]} outputs")
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    hf, wf = (h - 1) * stride + kh, (wd - 1) * stride + kw
    if hf - 2 * pad < 1 or wf - 2 * pad < 1:
        raise DimensionError("transpose_conv2d: padding removes the whole output")
    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    full = _kernels.col2im(cols, hf, wf, stride)
    out = full[:, :, pad:hf - pad, pad:wf - pad] if pad else full
    if b is not None:
        out = out + b.data[:, None, None]

    def bw(g):
        gx = gw = gb = None
        gcols = _windows(_pad(g, pad), kh, kw, stride)
        if x.requires_grad:
            gx = np.tensordot(gcols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = np.tensordot(x.data, gcols, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb
    parents = (x, w) if b is None else (x, w, b)
    return make(np.ascontiguousarray(out), parents, bw, "transpose_conv2d")


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    n, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d: spatial size {(h, w)} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bw(g):
        gg = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), (n, c, h // k, k, w // k, k))
        return (gg.reshape(x.shape),)
    return make(out, (x,), bw, "avg_pool2d")


# -- normalization / attention --------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: scale {gamma.shape}/offset {beta.shape} for dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return gx, ggamma, gbeta
    return make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if axis % x.ndim == x.ndim - 1:
        y = _kernels.softmax_lastaxis(x.data)
        return make(y, (x,), lambda g: (_kernels.softmax_lastaxis_grad(y, g),), "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return make(y, (x,), bw, "softmax")
