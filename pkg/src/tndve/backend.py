"""Select the compiled kernels when available, else the numpy fallback.

Set ``TNDVE_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pyimpl

if os.environ.get("TNDVE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pyimpl
else:
    try:
        from . import _speedups as _impl
    except ImportError:  # extension not built
        _impl = _pyimpl

BACKEND = _impl.BACKEND
glm_pass = _impl.glm_pass
irls = _impl.irls
glm_sandwich_parts = _impl.glm_sandwich_parts
kernel_sums = _impl.kernel_sums

CONVERGED = _pyimpl.CONVERGED
MAX_ITER_REACHED = _pyimpl.MAX_ITER_REACHED
HALVING_FAILED = _pyimpl.HALVING_FAILED
BOUNDARY_STALL = _pyimpl.BOUNDARY_STALL
SEPARATED = _pyimpl.SEPARATED
SINGULAR = _pyimpl.SINGULAR
