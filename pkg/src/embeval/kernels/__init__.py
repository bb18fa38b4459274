"""Hot-kernel dispatch: numba-jitted loops by default, pure numpy on demand.

Set EMBEVAL_NUMBA=0 to force the numpy fallback, EMBEVAL_NUMBA=1 to require
numba (ImportError if unavailable). Default "auto" uses numba when importable.
Both backends stay importable for tests and benchmarks.
"""
import os

from . import numpy_backend

_flag = os.environ.get("EMBEVAL_NUMBA", "auto").lower()

if _flag in ("0", "off", "false", "no"):
    _backend = numpy_backend
    USING_NUMBA = False
else:
    try:
        from . import numba_backend
        _backend = numba_backend
        USING_NUMBA = True
    except ImportError:
        if _flag in ("1", "on", "true", "yes", "require"):
            raise
        _backend = numpy_backend
        USING_NUMBA = False

softmax_xent = _backend.softmax_xent
binary_xent = _backend.binary_xent
normalize_rows = _backend.normalize_rows
sgd_update = _backend.sgd_update
momentum_update = _backend.momentum_update
adamw_update = _backend.adamw_update


def backend_name():
    return "numba" if USING_NUMBA else "numpy"
