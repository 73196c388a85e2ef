"""Pick the kernel implementation at import time.

Set ``PRISM_OOD_BACKEND=python`` to force the numpy fallback, or
``PRISM_OOD_BACKEND=compiled`` to make a missing extension an error.
"""
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

_requested = os.environ.get("PRISM_OOD_BACKEND", "auto").lower()

kernels = _fallback
BACKEND = "python"

if _requested != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
