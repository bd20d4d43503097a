"""Kernel selection: compiled extension when importable, numpy fallback else.

``YAOMPC_PURE=1`` forces the fallback; ``yaompc.kernels.HAVE_COMPILED`` tells
which implementation is active.  Both expose the same functions with
bit-identical results (see tests/test_kernels.py and benchmarks/).
"""

import os

from . import _kernels_py

HAVE_COMPILED = False
_impl = _kernels_py

if os.environ.get("YAOMPC_PURE") != "1":
    try:
        from . import _kernels as _compiled

        _impl = _compiled
        HAVE_COMPILED = True
    except ImportError:
        pass

yao_cone_neighbors_l1 = _impl.yao_cone_neighbors_l1
yao_cone_neighbors_l2 = _impl.yao_cone_neighbors_l2
