"""Backend selection for the hot kernels.

Set ``FUSETRACK_NO_NUMBA=1`` to force the pure-numpy path. When numba is not
importable the numpy path is used regardless.
"""
import os

_FLAG = os.environ.get("FUSETRACK_NO_NUMBA", "").strip().lower()

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

NUMBA_AVAILABLE = nb is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode with on-disk caching."""
    if nb is None:
        return func
    return nb.njit(cache=True, nogil=True)(func)
