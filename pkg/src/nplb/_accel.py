"""Numba availability switch.

Set ``NPLB_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable.
"""
import os

_FLAG = os.environ.get("NPLB_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
