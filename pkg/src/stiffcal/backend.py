"""Filter-core selection: compiled extension when available, numpy fallback.

The active default is chosen once at import time; set the environment
variable ``STIFFCAL_BACKEND=python`` (or ``compiled``) to force a choice.
"""

from __future__ import annotations

import os
import warnings

from . import _pykernels

try:
    from . import _kernels
except ImportError:  # extension not built; pure-Python core still works
    _kernels = None

BACKENDS = ("compiled", "python")


def have_compiled() -> bool:
    return _kernels is not None


def _default_backend() -> str:
    forced = os.environ.get("STIFFCAL_BACKEND")
    if forced:
        if forced not in BACKENDS:
            raise ValueError(f"STIFFCAL_BACKEND must be one of {BACKENDS}, got {forced!r}")
        if forced == "compiled" and _kernels is None:
            raise ImportError("STIFFCAL_BACKEND=compiled but the stiffcal._kernels "
                              "extension is not built")
        return forced
    if _kernels is None:
        warnings.warn("stiffcal._kernels extension not built; falling back to the "
                      "pure-Python filter core (much slower)", RuntimeWarning)
        return "python"
    return "compiled"


_ACTIVE = _default_backend()


def active_backend() -> str:
    """Name of the backend used when no explicit choice is passed."""
    return _ACTIVE


def get_core(backend: str | None = None):
    """Return the ``run_filter_core`` callable for a backend name."""
    name = backend or _ACTIVE
    if name == "compiled":
        if _kernels is None:
            raise ImportError("compiled backend requested but stiffcal._kernels is not built")
        return _kernels.run_filter_core
    if name == "python":
        return _pykernels.run_filter_core
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
