"""Integration kernels.  The compiled module is used when it was built and
FLOWEXP_PURE is not set; otherwise the numpy implementation takes over."""
import os

from . import dopri_py

try:
    if os.environ.get("FLOWEXP_PURE") == "1":
        raise ImportError("pure mode requested")
    from . import dopri_core as _compiled
except ImportError:
    _compiled = None

COMPILED = _compiled is not None
backend = _compiled if COMPILED else dopri_py
BACKEND_NAME = "cython" if COMPILED else "python"


def get_backend(name: str = "auto"):
    if name == "auto":
        return backend
    if name == "python":
        return dopri_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
