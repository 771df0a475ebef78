"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``LRNOISE_PURE=1``
to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("LRNOISE_PURE"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        pass

poisson_inversion = _impl.poisson_inversion
col2im = _impl.col2im
histogram_counts = _impl.histogram_counts
# numpy's vectorized exp beats a scalar loop, so the forward stays in numpy
softmax_lastaxis = _fallback.softmax_lastaxis
softmax_lastaxis_grad = _impl.softmax_lastaxis_grad

__all__ = ["BACKEND", "poisson_inversion", "col2im", "histogram_counts",
           "softmax_lastaxis", "softmax_lastaxis_grad"]
