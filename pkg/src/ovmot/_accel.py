"""Optional numba acceleration.

Kernels are written once as plain loop code and compiled with ``numba.njit``
when numba is importable. Setting ``OVMOT_DISABLE_NUMBA=1`` forces the
pure-numpy fallbacks even when numba is installed.
"""
import os

DISABLE_ENV = "OVMOT_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def _flag(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _flag(os.environ.get(DISABLE_ENV, "0"))


def njit(fn):
    """Compile ``fn`` with numba if available, else return None."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
