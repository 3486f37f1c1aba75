"""Backend selection for the hot numeric kernels.

``SMGLEARN_BACKEND=numpy`` forces the pure-numpy path; ``numba`` (the default
when numba imports) uses the ``@njit`` kernels.  The choice is made once at
import time.
"""

import os

_requested = os.environ.get("SMGLEARN_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"SMGLEARN_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

HAVE_NUMBA = False
if _requested == "numba":
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dependency in CI
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"
