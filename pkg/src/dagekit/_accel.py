"""Optional numba acceleration.

Set ``DAGEKIT_DISABLE_NUMBA=1`` to force the pure-numpy code paths.  When
numba is not importable the numpy paths are used as well.
"""
import os
import warnings

_DISABLED = os.environ.get("DAGEKIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by DAGEKIT_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError as exc:  # pragma: no cover - depends on environment
    NUMBA_AVAILABLE = False
    if not _DISABLED:
        warnings.warn(f"numba unavailable ({exc}); using numpy kernels")

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def use_numba():
    """True when the jitted kernels are active."""
    return NUMBA_AVAILABLE
