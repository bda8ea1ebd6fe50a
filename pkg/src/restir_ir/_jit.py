"""JIT switch for the numeric kernels.

Every hot loop in the package is written in the subset of Python that numba
compiles.  Setting ``RESTIR_IR_DISABLE_JIT=1`` before import swaps the
decorators for identity functions so the same source runs as plain
Python/numpy (slow, but handy for debugging and for the benchmark).

``RESTIR_IR_THREADS`` caps the numba worker pool.  It has to be applied
before numba spins up its threading layer, hence the environment juggling
at import time.
"""

import os

_threads = os.environ.get("RESTIR_IR_THREADS")
if _threads:
    os.environ.setdefault("NUMBA_NUM_THREADS", _threads)
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

JIT_ENABLED = os.environ.get("RESTIR_IR_DISABLE_JIT", "0").lower() not in ("1", "true", "yes")

if JIT_ENABLED:
    import numba
    from numba import prange

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

    def pjit(fn):
        """Parallel kernel over pixels / rays."""
        return numba.njit(parallel=True, cache=True, nogil=True)(fn)

    if _threads:
        numba.set_num_threads(min(int(_threads), numba.config.NUMBA_NUM_THREADS))

else:  # pure-python fallback
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn

    def pjit(fn):
        return fn


def num_threads():
    if not JIT_ENABLED:
        return 1
    import numba

    return numba.get_num_threads()


def set_threads(n: int):
    """Cap the worker count at runtime (no-op without the JIT)."""
    if not JIT_ENABLED or n <= 0:
        return
    import numba

    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
