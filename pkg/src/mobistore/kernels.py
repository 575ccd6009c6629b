"""Kernel selector: the compiled extension when importable, numpy otherwise.

Set ``MOBISTORE_PURE_PYTHON=1`` to force the numpy fallback.  ``BACKEND``
names the implementation in use.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MOBISTORE_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

backward_min_plus = _impl.backward_min_plus
soc_edge_weights = _impl.soc_edge_weights


def max_workers() -> int:
    """Thread cap for embarrassingly parallel loops (``MOBISTORE_THREADS``)."""
    try:
        return max(1, int(os.environ.get("MOBISTORE_THREADS", "1")))
    except ValueError:
        return 1
