"""Backend selection for the hot kernels.

The environment flag EVSPLAT_BACKEND picks the lane:

* ``numba`` — JIT-compiled kernels (default when numba imports),
* ``numpy`` — pure-numpy fallback, slower but dependency-free.

Both lanes implement the same contract and agree to ~1e-12; see
benchmarks/bench_render.py for a speed comparison.
"""

import os
import warnings

from . import _kernels_numpy

ENV_FLAG = "EVSPLAT_BACKEND"


def _load_numba_lane():
    from . import _kernels_numba
    return _kernels_numba


def get_backend(name=None):
    """Return a kernel lane module by name, or the environment's choice."""
    if name is None:
        name = os.environ.get(ENV_FLAG, "").strip().lower() or None
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        return _load_numba_lane()
    if name is None:
        try:
            return _load_numba_lane()
        except ImportError:
            warnings.warn("numba unavailable; falling back to the pure-numpy kernels")
            return _kernels_numpy
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numba' or 'numpy')")


active = get_backend()
