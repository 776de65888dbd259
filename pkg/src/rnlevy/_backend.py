"""Kernel backend selection.

Hot loops ship in two implementations: a numba-jitted one and a pure-numpy
one. The choice is made once at import time; set ``RNLEVY_NO_NUMBA=1`` to
force the numpy path (debugging, or the benchmark baseline). Both paths
produce identical results up to floating-point summation order.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("RNLEVY_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled via RNLEVY_NO_NUMBA")
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    HAS_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        # Transparent decorator so kernel source stays importable without numba.
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"
