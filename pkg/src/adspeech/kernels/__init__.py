"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension (``_ckernels``, built from Cython) is used when it
imports; otherwise the pure numpy versions in ``_pykernels`` are used. Set
``ADSPEECH_PURE_PYTHON=1`` to force the fallback.

Kernels
-------
zero_crossings
    Per-frame sign-change counts.
normalized_autocorr
    Per-frame normalized autocorrelation over a lag band (pitch tracking).
best_split
    Exhaustive Gini split search for one tree node.
smo_solve
    Pairwise dual solver for the RBF support vector machine.
"""

from __future__ import annotations

import os

from . import _pykernels as python_kernels

compiled_kernels = None
if os.environ.get("ADSPEECH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_kernels
    except ImportError:
        compiled_kernels = None

_active = compiled_kernels if compiled_kernels is not None else python_kernels

BACKEND = "cython" if compiled_kernels is not None else "python"

zero_crossings = _active.zero_crossings
normalized_autocorr = _active.normalized_autocorr
best_split = _active.best_split
smo_solve = _active.smo_solve

__all__ = [
    "BACKEND",
    "best_split",
    "compiled_kernels",
    "normalized_autocorr",
    "python_kernels",
    "smo_solve",
    "zero_crossings",
]
