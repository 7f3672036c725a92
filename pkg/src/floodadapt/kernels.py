"""Backend selection for the hot kernels.

The compiled extension is preferred when it imported cleanly; the pure-Python
module is the fallback and the semantic reference.  Set ``FLOODADAPT_BACKEND``
to ``python`` or ``cython`` to force one (forcing an unavailable backend
raises at import time rather than silently degrading).
"""

from __future__ import annotations

import os

from floodadapt import _kernels_py

_forced = os.environ.get("FLOODADAPT_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
elif _forced == "cython":
    from floodadapt import _kernels_cy as _impl  # type: ignore[no-redef]
elif _forced == "":
    try:
        from floodadapt import _kernels_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py
else:
    raise ImportError(f"FLOODADAPT_BACKEND={_forced!r}: expected 'python' or 'cython'")

BACKEND = _impl.BACKEND_NAME
fill_volumes = _impl.fill_volumes
shortest_times = _impl.shortest_times

__all__ = ["BACKEND", "fill_volumes", "shortest_times"]
