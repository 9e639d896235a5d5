"""Kernel dispatch: compiled Sturm routines when built, numpy otherwise.

Set ``IGMCMC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IGMCMC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

sturm_count = _impl.sturm_count
top_eigvals = _impl.top_eigvals
count_in_window = _impl.count_in_window

__all__ = ["BACKEND", "sturm_count", "top_eigvals", "count_in_window"]
