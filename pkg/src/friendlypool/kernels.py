"""Hot fibonacci kernel.

The default kernel is numba-compiled with ``nogil=True`` so that worker
threads computing items genuinely run in parallel and contend for CPUs at
the OS scheduler level. Set ``FRIENDLYPOOL_PURE_PYTHON=1`` to select the
pure-Python fallback (same results, holds the GIL, roughly 10x slower per
call). ``bench fib-bench`` compares the two paths.
"""
import os

PURE_PYTHON_ENV = "FRIENDLYPOOL_PURE_PYTHON"


def fib_python(n: int) -> int:
    """Naive exponential-time fibonacci; the recursion is the workload."""
    if n < 2:
        return n
    return fib_python(n - 1) + fib_python(n - 2)


# Module level on purpose: numba cannot disk-cache a self-recursive function
# defined inside a factory (the closure cell is empty at decoration time),
# and the name must not be pre-bound or the recursive call types as None.
try:
    from numba import njit as _njit
except ImportError:
    _njit = None

if _njit is not None and os.environ.get(PURE_PYTHON_ENV, "") in ("", "0"):
    # Eager signature: compiled at import (cached on disk), not on first
    # call from a worker thread mid-benchmark.
    @_njit("int64(int64)", nogil=True, cache=True)
    def fib_numba(n):
        if n < 2:
            return n
        return fib_numba(n - 1) + fib_numba(n - 2)

else:
    fib_numba = None

if fib_numba is not None:
    fib_kernel = fib_numba
    KERNEL_BACKEND = "numba"
else:
    fib_kernel = fib_python
    KERNEL_BACKEND = "python"


def warmup() -> None:
    """Touch the kernel once so no compilation/dispatch cost lands on a timed item."""
    fib_kernel(2)
