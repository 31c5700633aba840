"""Kernel backend chosen at import: compiled Cython if available, numpy otherwise.

Set ``LSFD_PURE_PYTHON=1`` to force the numpy kernels.
"""

import os

from . import _pykernels

if os.environ.get("LSFD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
