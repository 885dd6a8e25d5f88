"""Pick the compiled kernels when available, else the pure-Python ones.

Set ``ZAZOU_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the backend-equivalence tests).
"""

from __future__ import annotations

import os

if os.environ.get("ZAZOU_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as kernels

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
