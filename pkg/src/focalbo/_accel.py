"""Numba switch.

Hot loops are written once as plain Python over numpy arrays. When numba is
importable and ``FOCALBO_NUMBA`` is not set to ``0``, they are compiled with
``@njit``; otherwise callers fall back to the vectorized numpy paths.
"""
import os

_FLAG = os.environ.get("FOCALBO_NUMBA", "1").strip().lower()

try:
    if _FLAG in ("0", "false", "no", "off"):
        raise ImportError("numba disabled by FOCALBO_NUMBA")
    from numba import njit as _njit

    USE_NUMBA = True
except ImportError:
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if USE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(func):
        return func

    return wrapper
