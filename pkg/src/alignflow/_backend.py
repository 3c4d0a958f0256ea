"""Select the compiled core when available, else the numpy fallback.

Set ``ALIGNFLOW_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("ALIGNFLOW_PURE") == "1":
    core = _fallback
    NAME = "numpy"
else:
    try:
        from . import _core as core
        NAME = "cython"
    except ImportError:  # extension not built
        core = _fallback
        NAME = "numpy"

__all__ = ["core", "NAME", "_fallback"]
