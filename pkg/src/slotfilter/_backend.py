"""Kernel backend selection.

Set ``SLOTFILTER_BACKEND=numpy`` to force the pure-numpy kernels; the default
uses numba when it imports cleanly.
"""
import os

BACKEND_ENV = "SLOTFILTER_BACKEND"


def _want_numba():
    choice = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _want_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"
