"""Backend selection for the resampling hot loop.

The compiled Cython kernel is preferred when importable; otherwise the
pure-numpy reference runs.  ``PCSIG_BACKEND=python`` or
``PCSIG_BACKEND=compiled`` forces a choice (forcing ``compiled`` when the
extension is missing raises at import, which beats silently running slow).
"""

from __future__ import annotations

import os

from . import _reference

_FORCED = os.environ.get("PCSIG_BACKEND", "").strip().lower()

if _FORCED not in ("", "python", "compiled"):
    raise ImportError(f"PCSIG_BACKEND must be 'python' or 'compiled', got {_FORCED!r}")

if _FORCED == "python":
    _impl = _reference
    BACKEND = "python"
else:
    try:
        from . import _kernel as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = _reference
        BACKEND = "python"

null_fstats_chunk = _impl.null_fstats_chunk


def chunk_fn(name: str):
    """Fetch a specific backend's chunk function (used by the benchmark)."""
    if name == "python":
        return _reference.null_fstats_chunk
    if name == "compiled":
        from . import _kernel

        return _kernel.null_fstats_chunk
    raise ValueError(f"unknown backend {name!r}")
