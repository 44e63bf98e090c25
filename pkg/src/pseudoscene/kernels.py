"""Hot-loop kernels, compiled when available.

The Cython extension ``_kernels`` is used if it was built; otherwise the numpy
implementations in ``_fallback`` are used. Set ``PSEUDOSCENE_PURE_PYTHON=1``
to force the fallback. Both backends return bitwise-identical results.
"""

import os

from . import _fallback

if os.environ.get("PSEUDOSCENE_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "python" if _impl is _fallback else "compiled"

fps = _impl.fps
knn = _impl.knn
segment_max = _impl.segment_max
segment_sum = _impl.segment_sum
