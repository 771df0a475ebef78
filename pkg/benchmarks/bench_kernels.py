"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is called on the same inputs through both backends; the
results are compared before timing so a speedup never hides a mismatch.
"""
import argparse
import timeit

import numpy as np

from lrnoise._kernels import _fallback

try:
    from lrnoise._kernels import _ckernels
except ImportError:
    _ckernels = None


def cases():
    g = np.random.default_rng(0)
    lam = g.uniform(0, 30, 200_000)
    u = g.uniform(size=lam.size)
    cols = g.normal(size=(16, 32, 2, 2, 16, 16))
    resid = g.normal(0, 0.02, 1_000_000)
    y = _fallback.softmax_lastaxis(g.normal(size=(64, 256, 256)))
    gr = g.normal(size=y.shape)
    return {
        "poisson_inversion 2e5": ("poisson_inversion", (lam, u), True),
        "col2im 16x32x32x32": ("col2im", (cols, 32, 32, 2), True),
        "histogram_counts 1e6": ("histogram_counts", (resid, -0.5, 0.5, 256), True),
        "softmax_grad 64x256x256": ("softmax_lastaxis_grad", (y, gr), False),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the fallback is available")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, inputs, exact) in cases().items():
        py = getattr(_fallback, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{label:28s} {t_py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        cy = getattr(_ckernels, name)
        a, b = py(*inputs), cy(*inputs)
        same = np.array_equal(a, b) if exact else np.allclose(a, b, rtol=0, atol=1e-14)
        if not same:
            raise SystemExit(f"{label}: backends disagree")
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:28s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
