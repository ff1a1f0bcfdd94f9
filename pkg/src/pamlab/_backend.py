"""Backend selection for the hot kernels.

``PAMLAB_BACKEND=numpy`` (or ``PAMLAB_NO_NUMBA=1``) selects the pure-numpy
implementation; the default is numba when it imports cleanly.
"""
from __future__ import annotations

import os

_FORCE_NUMPY = os.environ.get("PAMLAB_BACKEND", "").lower() == "numpy" or os.environ.get(
    "PAMLAB_NO_NUMBA", ""
).lower() in ("1", "true", "yes")

try:  # pragma: no cover - import guard
    if _FORCE_NUMPY:
        raise ImportError
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or backend_name()
    if name == "numba":
        if not HAVE_NUMBA and _FORCE_NUMPY:
            raise RuntimeError("numba backend disabled by environment")
        from . import _kernels_numba as k
    elif name == "numpy":
        from . import _kernels_numpy as k
    else:
        raise ValueError(f"unknown backend {name!r}")
    return k
