"""Backend selection for the hot kernels.

The compiled extension is used when it imported successfully, unless
``FEDPIPE_SIM_PURE_PYTHON`` is set to a non-empty value other than ``0``.
"""

import os

from . import _kernels_py

_force_pure = os.environ.get("FEDPIPE_SIM_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure Python backend requested")
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

jacobi_singular_values = _impl.jacobi_singular_values
quantize_blocks = _impl.quantize_blocks

__all__ = ["BACKEND", "jacobi_singular_values", "quantize_blocks"]
