"""Flat parameter vectors shared by the compiled and numpy kernels."""

from __future__ import annotations

import numpy as np

ZERO, LEVEL, SEC3, F, G, RED, HARMONIC = range(7)

P_KIND, P_K, P_EPS, P_COEF = 0, 1, 2, 3
P_C1, P_C2, P_C3, P_RAMP = 4, 8, 12, 16
P_TANGENT = 19
N_PARAMS = 20

DIMENSION = {ZERO: 4, LEVEL: 2, SEC3: 4, F: 4, G: 4, RED: 2, HARMONIC: 4}

_UNUSED_PLATEAU = (0.0, 1.0, 2.0, 3.0)
_UNUSED_RAMP = (0.0, 1.0, 0.25)


def pack_params(
    kind: int,
    *,
    k: int = 0,
    eps: float = 0.0,
    coef: float = 0.0,
    c1=_UNUSED_PLATEAU,
    c2=_UNUSED_PLATEAU,
    c3=_UNUSED_PLATEAU,
    ramp=_UNUSED_RAMP,
) -> np.ndarray:
    p = np.zeros(N_PARAMS, dtype=np.float64)
    p[P_KIND] = kind
    p[P_K] = k
    p[P_EPS] = eps
    p[P_COEF] = coef
    p[P_C1 : P_C1 + 4] = c1
    p[P_C2 : P_C2 + 4] = c2
    p[P_C3 : P_C3 + 4] = c3
    p[P_RAMP : P_RAMP + 3] = ramp
    return p


def base_dimension(params) -> int:
    return DIMENSION[int(params[P_KIND])]


def state_dimension(params) -> int:
    """Length of the integrated state: ``d`` or ``d + d*d`` in tangent mode."""
    d = base_dimension(params)
    return d + d * d if params[P_TANGENT] != 0.0 else d


def tangent_params(params) -> np.ndarray:
    """Copy of ``params`` that also propagates the tangent matrix of the flow."""
    p = np.array(params, dtype=np.float64)
    p[P_TANGENT] = 1.0
    return p
