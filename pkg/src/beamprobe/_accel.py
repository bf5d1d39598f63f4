"""Numba switch.

Hot kernels exist twice: a numba ``@njit`` loop version and a pure-numpy
version.  Set ``BEAMPROBE_DISABLE_NUMBA=1`` to force the numpy path (useful
for debugging and on platforms without numba).
"""

import os

_FLAG = os.environ.get("BEAMPROBE_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)
