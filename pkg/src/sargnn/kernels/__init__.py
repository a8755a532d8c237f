"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is used when it was built and ``SARGNN_PURE_PYTHON`` is
not set to ``1``. ``BACKEND`` records which one was picked at import.
"""

import os

from . import _pykernels

_compiled = None
if os.environ.get("SARGNN_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"

neighbor_sum = _impl.neighbor_sum
neighbor_mean = _impl.neighbor_mean
neighbor_sum_scaled = _impl.neighbor_sum_scaled
pool_max = _impl.pool_max
pool_max_backward = _impl.pool_max_backward
csr_matvec = _impl.csr_matvec
dense_csr_matmul = _impl.dense_csr_matmul


def available_backends():
    """Map of backend name to module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
