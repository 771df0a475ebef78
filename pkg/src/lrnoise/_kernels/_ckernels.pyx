# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see _fallback.py for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()

cdef int MAX_POISSON_ITER = 1000


def poisson_inversion(lam, u):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam_ = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_ = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef Py_ssize_t n = lam_.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n)
    cdef double k, p, cdf, l, v
    cdef int it
    for i in range(n):
        l = lam_[i]
        v = u_[i]
        k = 0.0
        p = exp(-l)
        cdf = p
        it = 0
        while v > cdf and it < MAX_POISSON_ITER:
            k += 1.0
            p = p * (l / k)
            cdf = cdf + p
            it += 1
        out[i] = k
    return out


def col2im(cols, Py_ssize_t out_h, Py_ssize_t out_w, Py_ssize_t stride):
    cdef cnp.ndarray[cnp.float64_t, ndim=6] c_ = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = c_.shape[0], ch = c_.shape[1], kh = c_.shape[2], kw = c_.shape[3]
    cdef Py_ssize_t ho = c_.shape[4], wo = c_.shape[5]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] img = np.zeros((n, ch, out_h, out_w))
    cdef Py_ssize_t a, b, i, j, y, x
    # (i, j) outermost per pixel keeps the accumulation order of the numpy path
    for a in range(n):
        for b in range(ch):
            for i in range(kh):
                for j in range(kw):
                    for y in range(ho):
                        for x in range(wo):
                            img[a, b, i + stride * y, j + stride * x] += c_[a, b, i, j, y, x]
    return img


def histogram_counts(values, double lo, double hi, Py_ssize_t bins):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(bins, dtype=np.int64)
    cdef double width = (hi - lo) / bins
    cdef double f
    cdef Py_ssize_t i, n = v.shape[0], b
    for i in range(n):
        f = floor((v[i] - lo) / width)
        if f < 0:
            b = 0
        elif f > bins - 1:
            b = bins - 1
        else:
            b = <Py_ssize_t>f
        counts[b] += 1
    return counts


def softmax_lastaxis_grad(y, g):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] yy = np.ascontiguousarray(y, dtype=np.float64).reshape(-1, y.shape[y.ndim - 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gg = np.ascontiguousarray(g, dtype=np.float64).reshape(-1, y.shape[y.ndim - 1])
    cdef Py_ssize_t rows = yy.shape[0], n = yy.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((rows, n))
    cdef double d
    for i in range(rows):
        d = 0.0
        for j in range(n):
            d = d + gg[i, j] * yy[i, j]
        for j in range(n):
            out[i, j] = yy[i, j] * (gg[i, j] - d)
    return out.reshape(y.shape)
