"""Select the kernel backend at import time.

The compiled extension is preferred.  Setting the environment variable
``OPINCL_BACKEND=python`` forces the numpy fallback, which is also used
automatically when the extension was not built.
"""
import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("OPINCL_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built; stay on the fallback
        pass
    else:
        kernels = _compiled
        BACKEND = "compiled"

__all__ = ["BACKEND", "kernels"]
