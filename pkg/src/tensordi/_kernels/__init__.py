"""Kernel backend selection.

The compiled extension is preferred; the pure-Python twin is used when the
extension is missing or ``TENSORDI_PURE_PYTHON=1`` is set. Both expose
``cd_sweeps`` and ``threshold_inplace`` with identical semantics.
"""

import os

if os.environ.get("TENSORDI_PURE_PYTHON", "") == "1":
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

cd_sweeps = _impl.cd_sweeps
threshold_inplace = _impl.threshold_inplace

THRESHOLD_KIND = {"hard": 0, "soft": 1, "scad": 2}


def backend_name():
    """Name of the active kernel backend ('cython' or 'python')."""
    return BACKEND
