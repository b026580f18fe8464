"""Kernel selection: the compiled extension when importable, else the fallback.

Set ``COGOS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("COGOS_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "cython"

fnv1a_64 = _impl.fnv1a_64
bucket_counts = _impl.bucket_counts
scan_scores = _impl.scan_scores


def available() -> dict[str, object]:
    """All importable kernel implementations, keyed by name."""
    found: dict[str, object] = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
