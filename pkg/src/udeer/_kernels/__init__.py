"""Kernel backend selection.

The compiled extension (`udeer._kernels._core`) is preferred when it
imported cleanly; otherwise the NumPy fallback is used.  Set
``UDEER_BACKEND=python`` or ``UDEER_BACKEND=cython`` to force a choice
(forcing ``cython`` raises if the extension is missing).
"""

import os

_requested = os.environ.get("UDEER_BACKEND", "").strip().lower()
if _requested not in ("", "cython", "python"):
    raise ValueError(f"UDEER_BACKEND must be 'cython' or 'python', got {_requested!r}")

if _requested == "python":
    from udeer._kernels import pure as _impl

    BACKEND = "python"
else:
    try:
        from udeer._kernels import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from udeer._kernels import pure as _impl

        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
upsample2d_forward = _impl.upsample2d_forward
upsample2d_backward = _impl.upsample2d_backward
altitude_difference_grid = _impl.altitude_difference_grid
densify_fill = _impl.densify_fill
