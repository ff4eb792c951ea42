"""Selects between the compiled simulation core and the pure-Python path.

The compiled extension (``slicesim._core``, built from ``_core.pyx``) fuses
the per-slot queue dynamics and the value-network kernels into C loops. When
it is missing, every caller falls back to the reference implementations,
which produce the same results slot for slot. Selection happens at import,
can be forced with the ``SLICESIM_BACKEND`` environment variable (``c`` or
``python``) and can be switched at runtime with :func:`set_backend`.
"""

from __future__ import annotations

import os

try:
    from . import _core  # type: ignore[attr-defined]
    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False

_VALID = ("auto", "c", "python")
_forced = os.environ.get("SLICESIM_BACKEND", "auto").lower()
if _forced not in _VALID:
    raise RuntimeError(f"SLICESIM_BACKEND must be one of {_VALID}, got {_forced!r}")
if _forced == "c" and not HAVE_COMPILED:
    raise RuntimeError("SLICESIM_BACKEND=c but the compiled core is not built")

_mode = _forced


def set_backend(mode: str) -> None:
    global _mode
    if mode not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if mode == "c" and not HAVE_COMPILED:
        raise RuntimeError("compiled core is not available")
    _mode = mode


def backend_name() -> str:
    """The backend that calls will actually use right now."""
    if _mode == "auto":
        return "c" if HAVE_COMPILED else "python"
    return _mode


def use_compiled() -> bool:
    return backend_name() == "c"


def core():
    return _core
