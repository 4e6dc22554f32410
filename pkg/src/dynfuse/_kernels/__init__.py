"""Contraction-kernel backend selection.

The hot inner loops of training (per-item weight generation and its
gradients) exist twice: a compiled Cython extension (``_core``) and a
pure-numpy fallback (``_fallback``). The compiled backend is preferred when
the extension was built; set ``DYNFUSE_KERNELS=fallback`` or
``DYNFUSE_KERNELS=compiled`` to force one. ``benchmarks/kernel_bench.py``
compares the two.
"""

import os

from . import _fallback

_CHOICES = ("auto", "compiled", "fallback")


def _select():
    requested = os.environ.get("DYNFUSE_KERNELS", "auto")
    if requested not in _CHOICES:
        raise ValueError(
            f"DYNFUSE_KERNELS must be one of {_CHOICES}, got {requested!r}"
        )
    if requested == "fallback":
        return _fallback, "fallback"
    try:
        from . import _core
    except ImportError:
        if requested == "compiled":
            raise ImportError(
                "DYNFUSE_KERNELS=compiled but the extension is not built; "
                "reinstall with a working C toolchain"
            ) from None
        return _fallback, "fallback"
    return _core, "compiled"


_backend, BACKEND_NAME = _select()

mode3_contract = _backend.mode3_contract
mode3_contract_backward = _backend.mode3_contract_backward
cp_contract = _backend.cp_contract
cp_contract_backward = _backend.cp_contract_backward
mode3_apply = _backend.mode3_apply
mode3_apply_backward = _backend.mode3_apply_backward
cp_apply = _backend.cp_apply
cp_apply_backward = _backend.cp_apply_backward


def available_backends():
    """Name -> module for every importable backend (for tests and benchmarks)."""
    out = {"fallback": _fallback}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
