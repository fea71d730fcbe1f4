"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
NumPy implementations in ``_reference`` take over. Set
``DYNAMIX_BACKEND=python`` to force the fallback.
"""
import logging
import os

from . import _reference

log = logging.getLogger(__name__)

reference = _reference
compiled = None

try:
    from . import _kernels as compiled
except ImportError as exc:  # pragma: no cover - depends on build
    log.debug("compiled kernels unavailable: %s", exc)

if compiled is not None and os.environ.get("DYNAMIX_BACKEND", "").lower() != "python":
    kernels = compiled
else:
    kernels = _reference

name = kernels.BACKEND


def use(which: str):
    """Switch the process-wide backend to ``"compiled"`` or ``"python"``."""
    global kernels, name
    if which == "python":
        kernels = _reference
    elif which == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        kernels = compiled
    else:
        raise ValueError(f"unknown backend {which!r}")
    name = kernels.BACKEND
    return kernels
