"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``SPARTQ_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

_compiled = None
if not os.environ.get("SPARTQ_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"

bucket_keys = _pykernels.bucket_keys
neighbor_candidates = _impl.neighbor_candidates
epsilon_join = _impl.epsilon_join
sumtree_find = _impl.sumtree_find
adam_update = _impl.adam_update


def backends():
    """Map of available backend name -> module, for comparisons."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
