"""Select the numerical kernel implementation at import time.

The compiled extension ``_ckernels`` is used when it is importable; otherwise
the numpy implementation in ``_pykernels`` is used. Set
``SPARSEFIT_BACKEND=python`` to force the fallback, or ``=cython`` to fail
loudly when the extension is missing.
"""

import os

from . import _pykernels

_requested = os.environ.get("SPARSEFIT_BACKEND", "auto").strip().lower()

if _requested == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _pykernels

BACKEND = kernels.NAME


def available_backends():
    """Names of kernel modules importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def get_kernels(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
