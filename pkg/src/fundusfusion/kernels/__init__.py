"""Convolution kernel backend selection.

The env var FUNDUSFUSION_KERNELS picks the implementation at import time:

  auto   use numba when it imports cleanly, else fall back to numpy (default)
  numba  require numba; raise if unavailable
  numpy  force the pure-numpy path

Both backends expose identical signatures (see conv_numpy for the contracts)
and agree to float64 round-off. `benchmarks/bench_kernels.py` times them
against each other.
"""

import os

from . import conv_numpy

_choice = os.environ.get("FUNDUSFUSION_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        "FUNDUSFUSION_KERNELS must be one of auto|numba|numpy, got %r" % _choice)

BACKEND = "numpy"
_impl = conv_numpy
if _choice in ("auto", "numba"):
    try:
        from . import conv_numba as _numba_impl
        _impl = _numba_impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight


def backend_name():
    return BACKEND
