"""Backend selection for the hot loops.

The compiled ``_core`` extension is used when importable; otherwise, or when
the environment variable ``OFFRES_FORCE_PYTHON`` is set to a non-empty value
other than ``0``, the pure-numpy ``_pykernels`` twin is used.  Both expose
``spread``, ``interp`` and ``direct_sum`` with identical signatures.
"""
import os

from . import _pykernels

_force_python = os.environ.get("OFFRES_FORCE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend forced")
    from . import _core as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

spread = _impl.spread
interp = _impl.interp
direct_sum = _impl.direct_sum


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for active)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _core  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
