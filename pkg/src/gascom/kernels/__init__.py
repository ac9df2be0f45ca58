"""Attention kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``GASCOM_BACKEND=numpy``
to force the fallback.
"""

import os

from . import _numpy

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"numpy": _numpy}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def get_backend(name: str | None = None):
    name = name or os.environ.get("GASCOM_BACKEND") or ("cython" if _ckernels else "numpy")
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


active = get_backend()
softmax_rows = _numpy.softmax_rows
