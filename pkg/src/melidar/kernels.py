"""Backend selection for the simulator hot loops.

The compiled ``_core`` extension is used when importable; otherwise (or when
``MELIDAR_PURE_PYTHON=1``) the numpy fallback is used. Both produce
byte-identical results.
"""
import os

from . import _core_py

BACKEND = "python"
_compiled = None

if os.environ.get("MELIDAR_PURE_PYTHON") != "1":
    try:
        from . import _core as _compiled

        BACKEND = "cython"
    except ImportError:
        _compiled = None


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name=None):
    """Module implementing ``sparse_echoes`` for ``name`` (default: best available)."""
    name = name or BACKEND
    if name == "python":
        return _core_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel melidar._core is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def sparse_echoes(*args, backend=None, **kwargs):
    return get_backend(backend).sparse_echoes(*args, **kwargs)
