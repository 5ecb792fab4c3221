"""Selects the SVD kernel at import time.

The compiled Cython kernel is used when it was built; otherwise the
pure-Python implementation of the same algorithm. Set
``LOWRANK_CI_BACKEND=python`` to force the fallback.
"""

import os

from lowrank_ci import _gk_fallback

try:
    from lowrank_ci import _gk_core
except ImportError:  # extension not built
    _gk_core = None

_IMPLS = {"python": _gk_fallback.gk_svd}
if _gk_core is not None:
    _IMPLS["compiled"] = _gk_core.gk_svd


def available_backends():
    return sorted(_IMPLS)


def _initial_backend():
    requested = os.environ.get("LOWRANK_CI_BACKEND", "").strip().lower()
    if requested:
        if requested not in _IMPLS:
            raise ImportError(
                f"LOWRANK_CI_BACKEND={requested!r} is not available; have {available_backends()}"
            )
        return requested
    return "compiled" if "compiled" in _IMPLS else "python"


BACKEND = _initial_backend()


def get_kernel(backend=None):
    return _IMPLS[backend or BACKEND]


def set_backend(name):
    """Switch the process-wide default kernel; returns the previous name."""
    global BACKEND
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    previous, BACKEND = BACKEND, name
    return previous
