"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``HSS_NUMBA`` is not set to ``0``/``false``/``off``.  Both paths
implement identical math; results agree to rounding.
"""

import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("HSS_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no"):
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is optional
        _impl = _numpy
    else:
        BACKEND = "numba"

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
lcs_length = _impl.lcs_length

__all__ = ["BACKEND", "gru_forward", "gru_backward", "lcs_length"]
