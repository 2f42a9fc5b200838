"""Hot kernels with a compiled backend and a numpy fallback.

The Cython module ``_gru`` is used when it was built; otherwise, or when
``NOISESEP_PURE_PYTHON=1`` is set, the numpy reference kernels are used.
Both expose ``gru_forward``, ``gru_backward`` and ``sigmoid`` with identical
signatures.
"""

import os

from . import _reference

BACKEND = "numpy"

if os.environ.get("NOISESEP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _gru as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    gru_forward = _compiled.gru_forward
    gru_backward = _compiled.gru_backward
    sigmoid = _compiled.sigmoid
    BACKEND = "cython"
else:
    gru_forward = _reference.gru_forward
    gru_backward = _reference.gru_backward
    sigmoid = _reference.sigmoid


def backends():
    """Map backend name to its kernel namespace, for tests and benchmarks."""
    out = {"numpy": _reference}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def set_backend(name: str) -> str:
    """Route the package-level kernels to ``name``; returns the previous backend."""
    global gru_forward, gru_backward, sigmoid, BACKEND
    table = backends()
    if name not in table:
        raise ValueError(f"backend {name!r} unavailable (have {sorted(table)})")
    prev = BACKEND
    mod = table[name]
    gru_forward, gru_backward, sigmoid = mod.gru_forward, mod.gru_backward, mod.sigmoid
    BACKEND = name
    return prev
