"""Central finite-difference gradients for checking backward rules."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[..., float], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """d f / d arrays[i] by central differences; ``f`` takes plain arrays and returns a float."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    backward(fn(*leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the larger of the two max magnitudes."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def check_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Largest relative error between backward and finite differences over all inputs."""
    ana = analytic_grad(fn, arrays)
    num = numeric_grad(lambda *xs: fn(*[Tensor(x) for x in xs]).item(), arrays, h)
    return max(max_rel_error(a, n) for a, n in zip(ana, num))
