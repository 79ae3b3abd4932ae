"""JIT compilation shim.

Hot numerical kernels in this package are decorated with :func:`njit`. When
numba is installed (and not disabled) they are compiled to machine code; the
environment variable ``MVSTABLE_NO_NUMBA=1`` selects the interpreted
numpy path instead, which produces bit-identical results because no kernel
draws its own random numbers and fastmath is left off.
"""

import os

NUMBA_DISABLED = os.environ.get("MVSTABLE_NO_NUMBA", "") == "1"

try:
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit as _numba_njit
    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False


def njit(*args, **kwargs):
    """numba.njit when available, identity decorator otherwise."""
    if NUMBA_ENABLED:
        return _numba_njit(*args, **kwargs)

    def decorator(func):
        # mirror numba's .py_func handle so benchmarks can always reach
        # the interpreted implementation
        func.py_func = func
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return decorator(args[0])
    return decorator
