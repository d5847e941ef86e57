"""Selects the compiled kernel module when available, else the numpy fallback."""
import os

if os.environ.get("CORRIDORBO_PURE_PYTHON", "") == "1":
    from . import _kernels_py as _impl
    NAME = "python"
else:
    try:
        from . import _ckernels as _impl
        NAME = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        NAME = "python"

compose_gain_db = _impl.compose_gain_db
mc_mean_log2_sinr = _impl.mc_mean_log2_sinr
