"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise (or when
``MKVDP_BACKEND=python`` is set) the numpy kernels in ``_pycore`` are used.
"""

import os

from . import _pycore

kernels = _pycore
if os.environ.get("MKVDP_BACKEND", "").lower() != "python":
    try:
        from . import _core as kernels  # noqa: F811
    except ImportError:
        kernels = _pycore

BACKEND = kernels.BACKEND


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _core  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get(name):
    if name == "python":
        return _pycore
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
