"""Hot scalar kernels, compiled when the extension is built.

The Cython build is used when importable; otherwise, or when the environment
variable ``PERMSTR_PURE_PYTHON`` is set to a non-empty value, the pure-Python
versions are used. ``BACKEND`` names the active implementation.
"""

import os

from . import _kernels_py

if os.environ.get("PERMSTR_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

levenshtein = _impl.levenshtein
bilinear_resize = _impl.bilinear_resize

__all__ = ["BACKEND", "levenshtein", "bilinear_resize"]
