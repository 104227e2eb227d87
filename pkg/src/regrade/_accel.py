"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``REGRADE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
ssp_transport = _kernels_py.ssp_transport

if not os.environ.get("REGRADE_PURE_PYTHON"):
    try:
        from ._kernels import ssp_transport  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        pass

__all__ = ["BACKEND", "ssp_transport"]
