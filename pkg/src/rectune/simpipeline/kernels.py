"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``RECTUNE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RECTUNE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

fuse_topk = _impl.fuse_topk
greedy_rerank = _impl.greedy_rerank
evaluate_batch = _impl.evaluate_batch
