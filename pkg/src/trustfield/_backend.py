"""Kernel selection: compiled extension when importable, else pure Python.

Set ``TRUSTFIELD_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("TRUSTFIELD_PURE_PYTHON"):
    from . import _pykernels as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        from . import _pykernels as kernels

BACKEND = "python" if kernels.__name__.endswith("_pykernels") else "compiled"

__all__ = ["BACKEND", "kernels"]
