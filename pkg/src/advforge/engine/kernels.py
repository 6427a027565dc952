"""Backend selection for the hot kernels.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing.  ``ADVFORGE_BACKEND=cython|numpy`` forces a choice
(forcing ``cython`` raises if the extension failed to build).
"""

from __future__ import annotations

import os

from . import kernels_py

_FORCE = os.environ.get("ADVFORGE_BACKEND", "").strip().lower()

if _FORCE == "numpy":
    _impl = kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _corekernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _FORCE == "cython":
            raise
        _impl = kernels_py
        BACKEND = "numpy"

conv_out_hw = _impl.conv_out_hw
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
