"""Evaluation kernels: compiled extension when built, numpy fallback otherwise.

Set ``RELTEMP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
if not os.environ.get("RELTEMP_PURE_PYTHON"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

point_adjust = _impl.point_adjust
confusion = _impl.confusion
threshold_counts = _impl.threshold_counts
correlation_change = _impl.correlation_change
segments = _fallback.segments

__all__ = [
    "BACKEND",
    "point_adjust",
    "confusion",
    "threshold_counts",
    "correlation_change",
    "segments",
]
