"""Hot kernels with backend selection.

The numba backend is used when available unless ``PARACSI_DISABLE_NUMBA`` is
set; both backends stay importable for cross-checking and benchmarking.
"""

import numpy as np

from . import _kernels_numpy as numpy_backend
from ._accel import USE_NUMBA

if USE_NUMBA:
    from . import _kernels_numba as numba_backend

    _impl = numba_backend
else:
    numba_backend = None
    _impl = numpy_backend

BACKEND = "numba" if USE_NUMBA else "numpy"


def _prep(params):
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim == 2:
        params = params[None]
    return params


def assemble(params, freqs, n_tx, kd):
    """Channel matrices for a (B, L, 4) or (L, 4) parameter array."""
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    return _impl.assemble(_prep(params), freqs, int(n_tx), float(kd))


def linearized_sq(params, deltas, freqs, n_tx, kd):
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    return _impl.linearized_sq(_prep(params), _prep(deltas), freqs, int(n_tx), float(kd))
