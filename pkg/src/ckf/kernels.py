"""Event-kernel backend selection.

The compiled kernel is used when it was built; setting ``CKF_PURE_PYTHON=1``
forces the pure-Python one.
"""

from __future__ import annotations

import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = {"python": _pykernel.event_update}
if _ckernel is not None:
    BACKENDS["compiled"] = _ckernel.event_update

if _ckernel is not None and os.environ.get("CKF_PURE_PYTHON", "") in ("", "0"):
    DEFAULT_BACKEND = "compiled"
else:
    DEFAULT_BACKEND = "python"


def get_kernel(name: str | None = None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {sorted(BACKENDS)}") from None


def compiled_available() -> bool:
    return "compiled" in BACKENDS
