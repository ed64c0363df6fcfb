"""Kernel selection: the compiled extension when importable, else numpy.

Set ``COMPABS_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

LP_OK = _pykernels.LP_OK
LP_INFEASIBLE = _pykernels.LP_INFEASIBLE
LP_ITERLIMIT = _pykernels.LP_ITERLIMIT

_impl = _pykernels
BACKEND = "python"
if os.environ.get("COMPABS_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

covering_lp = _impl.covering_lp
lexmin_cover = _impl.lexmin_cover
scp_batch_1d = _impl.scp_batch_1d
cpre_factored = _impl.cpre_factored
upper_hull = _pykernels.upper_hull


def implementations():
    """Both implementations, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return out
