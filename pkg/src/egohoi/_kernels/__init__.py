"""Hot kernels: compiled Cython core with a numpy fallback.

The compiled module is used when it imports; set ``EGOHOI_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import fallback

native = None
if os.environ.get("EGOHOI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as native
    except ImportError:  # extension not built
        native = None

_impl = native if native is not None else fallback
BACKEND = "cython" if native is not None else "numpy"

triangulate_points = _impl.triangulate_points
window_majority = _impl.window_majority
chroma_key = _impl.chroma_key

CONVERGED = fallback.CONVERGED
MAX_ITER = fallback.MAX_ITER
BAD_INIT = fallback.BAD_INIT

__all__ = ["BACKEND", "native", "fallback", "triangulate_points", "window_majority",
           "chroma_key", "CONVERGED", "MAX_ITER", "BAD_INIT"]
