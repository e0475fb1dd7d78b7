"""Selects the sweep kernel at import time.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``QSSEP_KERNEL=python`` is set, the numpy fallback is.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _brickwork_py

try:  # pragma: no cover - depends on the build
    from . import _brickwork as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None


def get_kernel(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("compiled", "python" or None for the default)."""
    if name is None:
        name = os.environ.get("QSSEP_KERNEL", "compiled" if COMPILED_AVAILABLE else "python")
    if name == "python":
        return _brickwork_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("the compiled kernel is not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown kernel {name!r}")


def kernel_name(module: ModuleType) -> str:
    return "python" if module is _brickwork_py else "compiled"
