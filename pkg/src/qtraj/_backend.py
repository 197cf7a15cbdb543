"""Pick the compiled kernels when available, else the NumPy fallback.

Set ``QTRAJ_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

kernels = _kernels_py
if os.environ.get("QTRAJ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        pass

BACKEND = kernels.BACKEND
