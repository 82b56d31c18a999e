"""Numba dispatch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` unless ``XRFRECOLOR_DISABLE_NUMBA=1`` is set (or numba is not
importable).  Every kernel module also ships a vectorized numpy twin; the
public wrappers pick one based on :data:`USE_NUMBA`.
"""
import functools
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("XRFRECOLOR_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(func=None, **kwargs):
    if func is None:
        return functools.partial(njit, **kwargs)
    if numba is None:
        return func
    return numba.njit(cache=True, **kwargs)(func)


def set_threads(n):
    if numba is not None and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
