"""Convolution layout kernels, compiled when available.

The compiled backend is used unless it failed to build or the environment
variable ``DIFFPRUNE_KERNELS=python`` forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im

if os.environ.get("DIFFPRUNE_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        im2col = _ckernels.im2col
        col2im = _ckernels.col2im
