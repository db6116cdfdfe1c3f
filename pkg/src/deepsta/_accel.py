"""Numba switch.

Set ``DEEPSTA_DISABLE_NUMBA=1`` to force the pure-numpy code paths, e.g. to
debug a kernel or on platforms without numba. The flag is read once at import.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("DEEPSTA_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

USE_NUMBA = numba is not None and not _DISABLED


def jit(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)``; raises if numba is missing."""
    if numba is None:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
