"""Numba switch.

Set ``SINGDRIFT_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The
flag is read once at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("SINGDRIFT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by SINGDRIFT_DISABLE_NUMBA")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if HAS_NUMBA:
        return _njit(*args, cache=True, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
