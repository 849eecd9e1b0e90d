"""Kernel backend selection.

The compiled extension is preferred when present; the pure Python twins are
a drop-in fallback.  Set SFDESIM_KERNEL=python or SFDESIM_KERNEL=compiled
to force a backend (the latter raises if the extension is missing).
BACKEND names the choice and is recorded in run manifests, since the two
backends may differ in the last bits for vector-valued equations.
"""

from __future__ import annotations

import os

from . import pure

_requested = os.environ.get("SFDESIM_KERNEL", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"SFDESIM_KERNEL must be auto, compiled or python, got {_requested!r}"
    )

if _requested == "python":
    _impl = pure
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = pure
        BACKEND = "python"

em_discrete = _impl.em_discrete
em_dense = _impl.em_dense

__all__ = ["BACKEND", "em_discrete", "em_dense", "pure"]
