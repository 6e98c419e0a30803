"""Select the compiled kernel module, or the numpy fallback.

Set ``AECLAB_PURE_PYTHON=1`` to force the fallback even when the
extension is built.
"""

import os

from . import _kernels_py

if os.environ.get("AECLAB_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        COMPILED = True
    except ImportError:
        kernels = _kernels_py
        COMPILED = False

BACKEND = "cython" if COMPILED else "python"

__all__ = ["kernels", "COMPILED", "BACKEND", "_kernels_py"]
