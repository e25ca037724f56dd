"""Numerical core: compiled kernels with a pure-python fallback.

The Cython extension is preferred when importable; set PZTBEAM_PURE_PY=1 to
force the numpy fallback (used by the benchmark and the backend-equivalence
tests).
"""
import os

from . import _kernels_py

if os.environ.get("PZTBEAM_PURE_PY") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels_cy as _impl
    except ImportError:
        _impl = _kernels_py

rk4_modal_steps = _impl.rk4_modal_steps
hildreth_sweeps = _impl.hildreth_sweeps


def backend_name():
    """Name of the kernel backend in use ('cython' or 'python')."""
    return _impl.BACKEND
