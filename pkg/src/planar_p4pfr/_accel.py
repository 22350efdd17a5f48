"""JIT switch for the numeric kernels.

Kernels are written in the subset of numpy that numba's nopython mode
understands, so the same source runs compiled or as plain numpy. Set
``PLANAR_P4PFR_DISABLE_JIT=1`` to force the pure-numpy path (numba is then
never imported).
"""

from __future__ import annotations

import os

_FLAG = "PLANAR_P4PFR_DISABLE_JIT"


def _jit_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in ("", "0", "false", "no")


if _jit_requested():
    try:
        import numba as _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _numba = None
else:
    _numba = None

USE_NUMBA: bool = _numba is not None
BACKEND: str = "numba" if USE_NUMBA else "numpy"


def jit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if USE_NUMBA:
            return _numba.njit(**kwargs)(f)
        return f

    if fn is None:
        return wrap
    return wrap(fn)
