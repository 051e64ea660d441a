"""Optional numba acceleration.

Hot kernels are written twice: a numba ``@njit`` version and a pure-numpy
version. Which one the public functions dispatch to is decided once, at
import time, from the ``MRSUR_DISABLE_NUMBA`` environment variable
(any of ``1``, ``true``, ``yes`` disables numba). If numba cannot be
imported the numpy path is used regardless.
"""
import os

_FLAG = os.environ.get("MRSUR_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency here
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, else identity.

    Kernels are always compiled when numba is present, even with the
    disable flag set, so that tests can compare both paths side by side.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    """Name of the active kernel backend, ``'numba'`` or ``'numpy'``."""
    return "numba" if USE_NUMBA else "numpy"
