"""Backend selection for the span kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Setting ``PCFG_IO_PURE=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "numpy"
inside_span = _kernels_py.inside_span
outside_span = _kernels_py.outside_span

if os.environ.get("PCFG_IO_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        inside_span = _compiled.inside_span
        outside_span = _compiled.outside_span


def backend_functions(name: str):
    """(inside_span, outside_span) for ``name`` in {"numpy", "cython"}."""
    if name == "numpy":
        return _kernels_py.inside_span, _kernels_py.outside_span
    if name == "cython":
        from . import _kernels as compiled
        return compiled.inside_span, compiled.outside_span
    raise ValueError(f"unknown backend {name!r}")
