"""Solver kernel selection.

Prefers the compiled extension when it was built; otherwise falls back to the
numpy implementation. ``ENSPARSE_KERNEL=python`` forces the fallback,
``ENSPARSE_KERNEL=compiled`` makes a missing extension an error (useful in
benchmarks and CI).
"""

import os

_requested = os.environ.get("ENSPARSE_KERNEL", "auto").lower()

if _requested == "python":
    from .reference import lasso_kernel
    BACKEND = "python"
elif _requested == "compiled":
    from ._fista import lasso_kernel  # noqa: F401
    BACKEND = "compiled"
else:
    try:
        from ._fista import lasso_kernel  # noqa: F401
        BACKEND = "compiled"
    except ImportError:
        from .reference import lasso_kernel  # noqa: F401
        BACKEND = "python"


def backend() -> str:
    """Name of the kernel implementation selected at import time."""
    return BACKEND
