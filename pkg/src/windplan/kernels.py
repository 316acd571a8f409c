"""Backend selection for the dynamics kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``WINDPLAN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("WINDPLAN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
deriv = _impl.deriv
jac = _impl.jac
rk4 = _impl.rk4
rk4_sens = _impl.rk4_sens

python_backend = _kernels_py
