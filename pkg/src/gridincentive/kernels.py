"""Kernel backend selection.

The compiled extension is used when importable; set ``GRIDINCENTIVE_PUREPY=1``
to force the numpy fallback.
"""
import os

from . import _pykernels

if os.environ.get("GRIDINCENTIVE_PUREPY", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND

project_point = _impl.project_point
project_all = _impl.project_all
primal_step_all = _impl.primal_step_all
kkt_residual = _impl.kkt_residual
offline_iterate = _impl.offline_iterate
sweep = _impl.sweep


def backends():
    """Available kernel modules keyed by name (python always present)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
