"""Kernel backend selection.

Two interchangeable backends exist: ``python`` (numpy, always present)
and ``compiled`` (Cython extension, present when the extension built).
``VOXPLAN_BACKEND`` picks one explicitly; ``auto`` prefers compiled.
"""

from __future__ import annotations

import os

from .errors import ExecutionError
from . import kernels_py

BACKEND_ENV = "VOXPLAN_BACKEND"

_COMPILED = None
try:
    from . import kernels_cy as _COMPILED  # noqa: F401
except ImportError:
    _COMPILED = None


class Backend:
    def __init__(self, name, module):
        self.name = name
        self.conv3d = module.conv3d
        self.deconv3d = module.deconv3d
        self.subimage = module.subimage


_PYTHON = Backend("python", kernels_py)


def compiled_available() -> bool:
    return _COMPILED is not None


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    if compiled_available():
        names.append("compiled")
    return tuple(names)


def get_backend(name: str | None = None) -> Backend:
    """Resolve a backend by name, or from the environment when omitted."""
    if name is None:
        name = os.environ.get(BACKEND_ENV, "auto")
    if name in ("auto", ""):
        if compiled_available():
            return Backend("compiled", _COMPILED)
        return _PYTHON
    if name == "python":
        return _PYTHON
    if name == "compiled":
        if not compiled_available():
            raise ExecutionError(
                "compiled backend requested but the extension is not built")
        return Backend("compiled", _COMPILED)
    raise ExecutionError("unknown backend %r (choose auto, python, compiled)" % name)
