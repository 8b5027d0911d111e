"""Select the compiled kernels when available, else the pure-Python ones.

Set ``MANYSERVER_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}
try:  # pragma: no cover - depends on the build
    from . import _kernels

    BACKENDS["cython"] = _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _default() -> str:
    want = os.environ.get("MANYSERVER_BACKEND", "").lower()
    if want in BACKENDS:
        return want
    if want:
        log.warning("backend %r unavailable, falling back", want)
    return "cython" if "cython" in BACKENDS else "python"


NAME = _default()


def get(name: str | None = None):
    """Kernel module by name (default: the one selected at import)."""
    return BACKENDS[name or NAME]


def available() -> list[str]:
    return sorted(BACKENDS)
