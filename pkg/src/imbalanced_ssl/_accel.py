"""Numba toggle.

Hot kernels are written once as plain loops and compiled with ``numba.njit``
when available. Setting ``IMBALANCED_SSL_DISABLE_NUMBA=1`` (or running without
numba installed) selects the pure-numpy implementations instead.
"""

import os

_DISABLED = os.environ.get("IMBALANCED_SSL_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    NUMBA_AVAILABLE = True
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False


def use_numba():
    return NUMBA_AVAILABLE


def njit(func):
    """Compile ``func`` in nopython mode if numba is enabled, else return it unchanged."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if NUMBA_AVAILABLE else "numpy"
