"""Backend selection for the hot kernels.

The compiled Cython module is preferred. Set ``STWAVE_PURE_PYTHON=1`` to force
the numpy fallback, e.g. for debugging or benchmarking.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("STWAVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

find_spans = _impl.find_spans
basis_funs_batch = _impl.basis_funs_batch
trial_expansion_points = _impl.trial_expansion_points

__all__ = ["BACKEND", "basis_funs_batch", "find_spans", "trial_expansion_points"]
