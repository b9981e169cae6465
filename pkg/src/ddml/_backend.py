"""Kernel backend selection.

Hot loops (tree growing, tree traversal, pairwise distances) ship in two
flavours: a numba ``@njit`` kernel and a pure-numpy fallback.  The choice is
made once at import time from the ``DDML_BACKEND`` environment variable:

``DDML_BACKEND=numba``  use numba kernels (default when numba imports)
``DDML_BACKEND=numpy``  force the pure-numpy fallback
"""
import os

_requested = os.environ.get("DDML_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"DDML_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

HAVE_NUMBA = False
if _requested == "numba":
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
