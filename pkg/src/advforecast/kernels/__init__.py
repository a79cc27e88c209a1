"""Hot convolution kernels, compiled when available.

The Cython extension is used if it was built and imports cleanly; otherwise the
numpy implementation is used. Set ``ADVFORECAST_KERNELS=python`` to force the
fallback (handy for comparing backends).
"""

import os

from . import _conv_py

BACKEND = "python"
_impl = _conv_py

if os.environ.get("ADVFORECAST_KERNELS", "").lower() != "python":
    try:
        from . import _conv_ext as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _conv_py

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward"]
