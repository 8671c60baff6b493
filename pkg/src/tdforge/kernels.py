"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when
``TDFORGE_PURE_PYTHON=1`` is set, the pure-Python twin is used.  Both backends
are bitwise interchangeable.
"""
import os

from tdforge import _kernels_py

if os.environ.get("TDFORGE_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from tdforge import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"
sample_path = _impl.sample_path
td0_kernel = _impl.td0_kernel
