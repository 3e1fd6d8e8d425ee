"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``SPARSEFA_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("SPARSEFA_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

cd_sweep = _impl.cd_sweep

__all__ = ["BACKEND", "cd_sweep", "get_backend"]


def get_backend(name: str = None):
    """Return the kernel module ``name`` ('cython' or 'python'); default is active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
