"""Optional numba acceleration.

Hot kernels are written as plain numpy/scalar functions and JIT-compiled
with numba when it is importable and the ``HAMASSIM_NUMBA`` environment
variable is not set to ``0``/``false``/``off``.  The un-jitted Python
function remains reachable as ``fn.py_func`` (numba's own attribute) so
benchmarks can compare both paths in-process.
"""

import os

try:
    import numba as _numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("HAMASSIM_NUMBA", "1").lower() not in (
    "0",
    "false",
    "off",
)


def maybe_njit(**options):
    """Return @njit(cache=True, **options) when enabled, else identity."""

    def decorate(fn):
        if NUMBA_ENABLED:
            options.setdefault("cache", True)
            return _numba.njit(**options)(fn)
        return fn

    return decorate


def py_func_of(fn):
    """Plain-Python version of a maybe-jitted kernel."""
    return getattr(fn, "py_func", fn)
