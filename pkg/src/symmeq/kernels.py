"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``SYMMEQ_PURE=1``) the numpy implementation takes over. Both expose
``step_batch`` and ``gae`` with identical signatures.
"""
import os

from . import _kernels_py

if os.environ.get("SYMMEQ_PURE") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
N_TERMS = _kernels_py.N_TERMS
offsets = _kernels_py.offsets
step_batch = _impl.step_batch
gae = _impl.gae


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
