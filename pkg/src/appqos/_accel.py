"""Numba toggle.

Hot kernels are written in the subset of Python numba understands. When numba
is importable and ``APPQOS_DISABLE_NUMBA`` is unset (or ``0``), they are
compiled with ``@njit``; otherwise the numpy fallback implementations are used.
"""
from __future__ import annotations

import os

_FLAG = "APPQOS_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships in the dev env
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip() in ("", "0")


def njit(fn):
    """Compile ``fn`` with numba if available; return it untouched otherwise.

    Compilation is lazy, so wrapping costs nothing until the first call.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
