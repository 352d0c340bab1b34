"""Backend selection for the hot numeric kernels.

The compiled extension is used when it imports cleanly. Setting
``ACLAE_DT_PURE_PYTHON=1`` forces the numpy fallback, which is also what you
get when the package was installed without a C compiler.
"""

import os

from . import _kernels_py

BACKEND = "numpy"

if os.environ.get("ACLAE_DT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
upsample2x2_backward = _impl.upsample2x2_backward
window_gram = _impl.window_gram

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "upsample2x2_backward",
    "window_gram",
]
