"""Optional numba acceleration.

Kernels are written once in the nopython subset and compiled when numba is
importable. Setting ``IVSELECT_DISABLE_NUMBA=1`` selects the pure-numpy paths
instead, which is useful for debugging and for benchmarking the two against
each other.
"""

import os

_TRUTHY = {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

DISABLED_BY_ENV = os.environ.get("IVSELECT_DISABLE_NUMBA", "").strip().lower() in _TRUTHY
USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def compile_kernel(func):
    """Return the nopython-compiled version of ``func``, or None without numba."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
