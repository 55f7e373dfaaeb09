"""Numba dispatch.

Kernels in :mod:`anisoflow.kernels` come in pairs: an ``@njit`` version and a
pure-numpy version. Setting ``ANISOFLOW_DISABLE_NUMBA=1`` (or numba being
absent) selects the numpy path at import time.
"""

import os

_disabled = os.environ.get("ANISOFLOW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def use_numba():
    return HAVE_NUMBA
