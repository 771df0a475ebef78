"""Pure-numpy versions of the compiled kernels.

The Poisson, scatter-add and histogram kernels perform the same
floating-point operations in the same order as their Cython counterparts
and return bit-identical results. The softmax gradient sums each row in a
different order, so the two backends agree to rounding only.
"""
import numpy as np

MAX_POISSON_ITER = 1000


def poisson_inversion(lam, u):
    """Poisson draws by sequential search of the CDF.

    ``lam`` and ``u`` are float64 arrays of equal shape; ``u`` holds the
    uniform variates driving the inversion.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    u = np.ascontiguousarray(u, dtype=np.float64).ravel()
    k = np.zeros_like(lam)
    p = np.exp(-lam)
    cdf = p.copy()
    idx = np.flatnonzero(u > cdf)
    it = 0
    while idx.size and it < MAX_POISSON_ITER:
        k[idx] += 1.0
        p[idx] = p[idx] * (lam[idx] / k[idx])
        cdf[idx] = cdf[idx] + p[idx]
        idx = idx[u[idx] > cdf[idx]]
        it += 1
    return k


def col2im(cols, out_h, out_w, stride):
    """Scatter-add ``cols[N, C, kh, kw, Ho, Wo]`` into an ``[N, C, out_h, out_w]`` image."""
    n, c, kh, kw, ho, wo = cols.shape
    img = np.zeros((n, c, out_h, out_w))
    for i in range(kh):
        for j in range(kw):
            img[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return img


def histogram_counts(values, lo, hi, bins):
    """Uniform-bin counts with out-of-range values clamped into the edge bins."""
    values = np.ascontiguousarray(values, dtype=np.float64).ravel()
    width = (hi - lo) / bins
    idx = np.floor((values - lo) / width)
    idx = np.clip(idx, 0, bins - 1).astype(np.int64)
    return np.bincount(idx, minlength=bins).astype(np.int64)


_SOFTMAX_BLOCK = 1 << 15  # elements per cache-sized block


def softmax_lastaxis(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    rows = x.reshape(-1, n)
    out = np.empty_like(rows)
    step = max(1, _SOFTMAX_BLOCK // max(n, 1))
    for s in range(0, rows.shape[0], step):
        z = out[s:s + step]
        np.subtract(rows[s:s + step], rows[s:s + step].max(axis=-1, keepdims=True), out=z)
        np.exp(z, out=z)
        z /= z.sum(axis=-1, keepdims=True)
    return out.reshape(x.shape)


def softmax_lastaxis_grad(y, g):
    return y * (g - (g * y).sum(axis=-1, keepdims=True))
