"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``IMPULSE_QVI_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("IMPULSE_QVI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

philox4x32 = _impl.philox4x32
interp_stencil = _impl.interp_stencil
gather_max = _impl.gather_max
philox_uniforms = _impl.philox_uniforms

__all__ = ["BACKEND", "philox4x32", "philox_uniforms", "interp_stencil", "gather_max"]
