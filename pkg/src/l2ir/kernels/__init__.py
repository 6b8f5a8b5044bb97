"""Kernel backend selection.

Prefers the compiled Cython extension and falls back to the pure-numpy
reference implementation when the extension is missing. Set
``L2IR_FORCE_PYTHON_KERNELS=1`` to force the fallback (used by the
benchmark and by tests comparing the two backends).
"""

from __future__ import annotations

import os

from l2ir.kernels import reference

if os.environ.get("L2IR_FORCE_PYTHON_KERNELS") == "1":
    _impl = reference
else:
    try:
        from l2ir.kernels import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference

BACKEND: str = _impl.BACKEND
csr_spmm = _impl.csr_spmm
pairwise_jaccard = _impl.pairwise_jaccard

__all__ = ["BACKEND", "csr_spmm", "pairwise_jaccard", "reference"]
