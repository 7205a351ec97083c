"""Kernel backend selection.

The compiled extension is used when it was built; setting the environment
variable ``LIOEKF_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("LIOEKF_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
back_propagate = _impl.back_propagate
accumulate_scalar = _impl.accumulate_scalar
accumulate_block3 = _impl.accumulate_block3
solve_block3 = _impl.solve_block3


def available_backends():
    """Mapping of backend name to module for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
