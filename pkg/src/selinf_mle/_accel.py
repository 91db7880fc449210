"""Optional numba acceleration.

Set ``SELINF_NO_NUMBA=1`` in the environment to force the pure-numpy
kernels.  When numba is not importable the numpy kernels are used as well.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

DISABLED = os.environ.get("SELINF_NO_NUMBA", "0").strip().lower() not in _FALSY
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` with cached compilation, or an identity decorator."""
    opts = dict(cache=True, nogil=True)
    opts.update(kwargs)
    if HAVE_NUMBA:
        if args and callable(args[0]):
            return numba.njit(**opts)(args[0])
        return numba.njit(*args, **opts)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def n_threads():
    """Worker cap from ``SELINF_THREADS`` (default 1)."""
    raw = os.environ.get("SELINF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
