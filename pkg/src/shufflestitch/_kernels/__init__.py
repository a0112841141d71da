"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy implementations take over with identical contracts. ``BACKEND`` names
the active choice so tests and benchmarks can report it.
"""

import os

from . import conv1d_numpy

if os.environ.get("SHUFFLESTITCH_FORCE_NUMPY"):
    _compiled = None
else:
    try:
        from . import _conv1d_cy as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "numpy"
    _impl = conv1d_numpy


def conv1d_forward(x, w, pad):
    return _impl.conv1d_forward(x, w, pad)


def conv1d_backward_input(gy, w, t_in, pad):
    return _impl.conv1d_backward_input(gy, w, t_in, pad)


def conv1d_backward_kernel(gy, x, k, pad):
    return _impl.conv1d_backward_kernel(gy, x, k, pad)
