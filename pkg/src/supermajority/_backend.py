"""Selects the compiled decoder when available, else the numpy twin.

Setting ``SMJ_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

__all__ = ["get_backend", "available_backends", "DEFAULT"]


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name=None):
    """Return the decoder module called ``name`` (default: best available)."""
    if name is None:
        name = os.environ.get("SMJ_BACKEND", "").strip().lower() or None
    if name is None:
        return _compiled if _compiled is not None else _fallback
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("the compiled extension is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


DEFAULT = get_backend().BACKEND
