"""Hot numeric kernels with a compiled core and a pure-Python fallback.

Both backends expose the same two functions:

    sparse_matvec(indptr, term_ids, weights, qdense)   -> per-row dot products
    gated_mean_layer(indptr, src, gate_self, gate_edge, proj, bias, act) -> next states

The compiled Cython module is preferred when it imported cleanly; the numpy
implementation is the reference and is always available. Set
CITEQA_FORCE_PY_KERNELS=1 to force the fallback (the benchmark uses this to
compare the two).
"""

import os

from . import _pykernels

if os.environ.get("CITEQA_FORCE_PY_KERNELS") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

sparse_matvec = _impl.sparse_matvec
gated_mean_layer = _impl.gated_mean_layer
ACT_NONE = _pykernels.ACT_NONE
ACT_TANH = _pykernels.ACT_TANH

__all__ = ["ACT_NONE", "ACT_TANH", "BACKEND", "gated_mean_layer", "sparse_matvec"]
