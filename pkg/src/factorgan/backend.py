"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback takes over. ``FGAN_BACKEND=python`` forces the fallback and
``FGAN_BACKEND=cython`` makes a missing extension an import error.
"""
import os

from . import _fallback

_requested = os.environ.get("FGAN_BACKEND", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise ImportError(f"FGAN_BACKEND must be auto, cython or python, not {_requested!r}")

_compiled = None
if _requested != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _requested == "cython":
            raise

kernels = _compiled if _compiled is not None else _fallback
NAME = "cython" if _compiled is not None else "python"


def available():
    """Names of backends importable in this environment."""
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    else:
        try:
            from . import _kernels  # noqa: F401
            names.insert(0, "cython")
        except ImportError:
            pass
    return names


def get(name):
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def use(name):
    """Switch the active backend for subsequent calls (tests and benchmarks)."""
    global kernels, NAME
    kernels = get(name)
    NAME = name
