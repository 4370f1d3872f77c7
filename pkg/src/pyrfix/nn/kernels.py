"""Kernel selection: compiled GRU extension when available, numpy otherwise.

The compiled module is optional; ``PYRFIX_NO_EXT=1`` forces the fallback.
Both kernels share one layout and agree numerically, so callers only ever
see the selected namespace.
"""

from __future__ import annotations

import os

from . import _gru_py

_compiled = None
if not os.environ.get("PYRFIX_NO_EXT"):
    try:
        from . import _gru_speedups as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

HAVE_COMPILED = _compiled is not None
_active = _compiled if HAVE_COMPILED else _gru_py


def get_kernel(name: str | None = None):
    """Kernel namespace by name: None/'auto', 'compiled', or 'fallback'."""
    if name in (None, "auto"):
        return _active
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    if name == "fallback":
        return _gru_py
    raise ValueError(f"unknown kernel {name!r}")


def active_kernel_name() -> str:
    return "compiled" if _active is _compiled and HAVE_COMPILED else "fallback"
