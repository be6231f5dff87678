"""Hot loops with a compiled implementation and a numpy fallback.

The compiled extension is used when it imports; setting the environment
variable ``SECTIONFLOW_BACKEND=python`` forces the numpy implementation.
"""

from __future__ import annotations

import os

from . import _pykernels
from .params import (
    DIMENSION,
    F,
    G,
    HARMONIC,
    LEVEL,
    RED,
    SEC3,
    ZERO,
    base_dimension,
    pack_params,
    state_dimension,
    tangent_params,
)

_backend = None
if os.environ.get("SECTIONFLOW_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _backend
    except ImportError:  # extension not built
        _backend = None

if _backend is None:
    _backend = _pykernels
    BACKEND = "python"
else:
    BACKEND = "cython"

field = _backend.field
jacobian_field = _backend.jacobian_field
integrate = _backend.integrate
integrate_times = _backend.integrate_times
integrate_grouped = _backend.integrate_grouped
sweep_slabs = _backend.sweep_slabs
stamp_points = _backend.stamp_points
hull_cells = _backend.hull_cells

__all__ = [
    "BACKEND",
    "DIMENSION",
    "F",
    "G",
    "HARMONIC",
    "LEVEL",
    "RED",
    "SEC3",
    "ZERO",
    "base_dimension",
    "field",
    "hull_cells",
    "integrate",
    "integrate_grouped",
    "integrate_times",
    "jacobian_field",
    "pack_params",
    "state_dimension",
    "stamp_points",
    "sweep_slabs",
    "tangent_params",
]
