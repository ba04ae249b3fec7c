"""Kernel backend selection.

TINT_KERNEL_BACKEND=compiled|python forces a backend; the default (auto)
uses the compiled extension when it imported cleanly and the numpy
fallback otherwise.
"""

import os

from . import _kernel_fallback

try:
    from . import _core as _compiled
except ImportError:  # extension not built on this install
    _compiled = None

_choice = os.environ.get("TINT_KERNEL_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _kernel_fallback
    BACKEND_NAME = "python"
elif _choice == "compiled":
    if _compiled is None:
        raise ImportError(
            "TINT_KERNEL_BACKEND=compiled but the tintsim._core extension is not built"
        )
    kernels = _compiled
    BACKEND_NAME = "compiled"
elif _choice == "auto":
    if _compiled is not None:
        kernels = _compiled
        BACKEND_NAME = "compiled"
    else:
        kernels = _kernel_fallback
        BACKEND_NAME = "python"
else:
    raise ImportError(f"unknown TINT_KERNEL_BACKEND value: {_choice!r}")


def get_backend(name: str):
    """Return a specific backend module (for cross-backend tests/benchmarks)."""
    if name == "python":
        return _kernel_fallback
    if name == "compiled":
        if _compiled is None:
            return None
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
