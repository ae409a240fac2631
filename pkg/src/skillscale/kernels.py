"""Backend selection for the fitting kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Set ``SKILLSCALE_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

_compiled = None
if os.environ.get("SKILLSCALE_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _kernels_c as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _kernels_py


def get(name=None):
    """Kernel module by name (``"compiled"``/``"python"``), default the active one."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; build the extension first")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available():
    return ["compiled", "python"] if _compiled is not None else ["python"]
