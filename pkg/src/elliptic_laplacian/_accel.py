"""Numba switch.

Hot kernels are written twice: an ``@njit`` loop version and a broadcasting
numpy version. Set ``ELLIPTIC_LAPLACIAN_NO_NUMBA=1`` to force the numpy path
(also used automatically when numba is not importable).
"""
import os

_DISABLED = os.environ.get("ELLIPTIC_LAPLACIAN_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def use_numba() -> bool:
    return HAVE_NUMBA
