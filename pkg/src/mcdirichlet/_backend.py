"""Kernel selection: compiled when importable, numpy otherwise.

``MCDIRICHLET_BACKEND`` may be set to ``cython`` or ``numpy`` to force one.
Signed-distance domains always run on the numpy kernel.
"""
from __future__ import annotations

import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # pragma: no cover - depends on the build
    _ckernel = None

HAVE_COMPILED = _ckernel is not None


def _default():
    want = os.environ.get("MCDIRICHLET_BACKEND", "auto").lower()
    if want == "numpy":
        return _pykernel
    if want == "cython":
        if _ckernel is None:
            raise ImportError("MCDIRICHLET_BACKEND=cython but the compiled kernel is not built")
        return _ckernel
    return _ckernel if _ckernel is not None else _pykernel


DEFAULT = _default()


def get(name=None):
    if name is None:
        return DEFAULT
    if name == "numpy":
        return _pykernel
    if name == "cython":
        if _ckernel is None:
            raise ImportError("compiled kernel not available")
        return _ckernel
    raise ValueError(f"unknown backend '{name}'")


def kernel_for(plan, name=None):
    k = get(name)
    if plan.dom_kind == 2:
        return _pykernel
    return k
