"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Set ``MASK2ALPHA_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

if _compiled is not None and not os.environ.get("MASK2ALPHA_PURE_PYTHON"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
build_neighbors = _impl.build_neighbors
subm_conv = _impl.subm_conv
largest_component = _impl.largest_component


def get_backend(name):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
