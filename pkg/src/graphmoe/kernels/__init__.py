"""CSR kernel backend selection.

The compiled extension is preferred; the numpy implementation is the
fallback. Set GRAPHMOE_PURE_PYTHON=1 to force the fallback (useful for
benchmarking and for debugging without a build step).
"""
from __future__ import annotations

import os

from . import _csr_py

if os.environ.get("GRAPHMOE_PURE_PYTHON"):
    _impl = _csr_py
    BACKEND = "numpy"
else:
    try:
        from . import _csr_c as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _csr_py
        BACKEND = "numpy"

spmm = _impl.spmm
segment_sum = _impl.segment_sum
segment_max = _impl.segment_max

__all__ = ["BACKEND", "spmm", "segment_sum", "segment_max"]
