"""2D DFT over the trailing two axes as products with precomputed matrices.

Both transforms are compositions of :func:`ops.matmul` with constant
matrices, so their backward passes are the exact adjoints.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import ops
from .tensor import DimensionError, Tensor


@lru_cache(maxsize=None)
def dft_matrices(n: int) -> tuple[Tensor, Tensor]:
    """Cosine and sine parts of the n-point DFT matrix, ``W = C - iS``."""
    k = np.arange(n)
    # reduce k*m mod n before scaling for exact symmetry
    angle = 2.0 * np.pi * (np.outer(k, k) % n) / n
    return Tensor(np.cos(angle)), Tensor(np.sin(angle))


def dft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Unnormalized forward DFT; returns ``(re, im)``."""
    if x.ndim < 2:
        raise DimensionError(f"dft2 needs at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    ch, sh = dft_matrices(h)
    cw, sw = dft_matrices(w)
    xc = ops.matmul(x, cw)
    xs = ops.matmul(x, sw)
    re = ops.sub(ops.matmul(ch, xc), ops.matmul(sh, xs))
    im = ops.mul(ops.add(ops.matmul(sh, xc), ops.matmul(ch, xs)), -1.0)
    return re, im


def idft2(re: Tensor, im: Tensor) -> Tensor:
    """Real part of the inverse DFT, scaled by ``1 / (H * W)``."""
    if re.shape != im.shape:
        raise DimensionError(f"idft2: re {re.shape} and im {im.shape} differ")
    if re.ndim < 2:
        raise DimensionError(f"idft2 needs at least 2 axes, got {re.shape}")
    h, w = re.shape[-2:]
    ch, sh = dft_matrices(h)
    cw, sw = dft_matrices(w)
    a = ops.sub(ops.matmul(ch, re), ops.matmul(sh, im))
    b = ops.add(ops.matmul(sh, re), ops.matmul(ch, im))
    x = ops.sub(ops.matmul(a, cw), ops.matmul(b, sw))
    return ops.mul(x, 1.0 / (h * w))
