"""Time-1 maps of the Hamiltonian flows and the reduced planar trajectories.

All integration runs through :mod:`sectionflow.kernels` (adaptive Dormand-Prince
5(4)).  A point whose initial velocity is exactly zero is a fixed point of the
autonomous flow and is returned bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .geometry import RegionFamily, ScaleParams, region_family
from .hamiltonians import (
    OMEGA,
    HamiltonianDef,
    PhasePoint,
    build_F,
    build_G,
    build_section3_H,
    g_coefficient,
    reduced_params,
)

STATUS_MESSAGES = {1: "step size underflow", 2: "step budget exhausted"}


@dataclass(frozen=True)
class FlowSpec:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = math.inf
    max_steps: int = 1_000_000
    method: str = "dopri5"

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0 or self.max_steps <= 0:
            raise ValueError("step limits must be positive")
        if self.method != "dopri5":
            raise ValueError(f"unsupported integration method {self.method!r}")


DEFAULT_SPEC = FlowSpec()


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot reach the final time.

    ``states`` holds the last accepted state of every row and ``failed`` marks
    the rows that did not finish.
    """

    def __init__(self, message, states, failed):
        super().__init__(message)
        self.states = states
        self.failed = failed


def _params_of(H) -> np.ndarray:
    return H.params if isinstance(H, HamiltonianDef) else np.asarray(H, dtype=float)


def integrate_batch(H, Z, t0: float, t1: float, spec: FlowSpec = DEFAULT_SPEC, group=None):
    """Integrate each row of ``Z`` from ``t0`` to ``t1``; raises IntegrationError on failure.

    ``group`` forces rows with equal labels to share one step sequence, which
    keeps finite-difference stencils coherent.
    """
    params = _params_of(H)
    Z = np.ascontiguousarray(np.atleast_2d(np.asarray(Z, dtype=float)))
    args = (params, Z, float(t0), float(t1), spec.rel_tol, spec.abs_tol, spec.max_step,
            int(spec.max_steps))
    if group is not None:
        group = np.asarray(group)
        order = np.argsort(group, kind="stable")
        _, counts = np.unique(group[order], return_counts=True)
        starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        sorted_out, status = kernels.integrate_grouped(
            params, np.ascontiguousarray(Z[order]), starts, *args[2:]
        )
        out = np.empty_like(sorted_out)
        out[order] = sorted_out
        status = status[np.argsort(order)]
    else:
        out, status, _ = kernels.integrate(*args)
    failed = status != 0
    if failed.any():
        code = int(status[failed][0])
        raise IntegrationError(
            f"integration failed for {int(failed.sum())} point(s): {STATUS_MESSAGES[code]}",
            out,
            failed,
        )
    return out


def tangent_batch(H, Z, t0: float, t1: float, spec: FlowSpec = DEFAULT_SPEC):
    """Flow each row of ``Z`` together with the derivative of the flow map.

    Solves the variational equation ``M' = DX(z) M`` with ``M(t0) = I``
    alongside the state.  Returns ``(images, M)`` with ``M`` of shape (N, d, d).
    """
    params = kernels.tangent_params(_params_of(H))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, d = Z.shape
    aug = np.concatenate([Z, np.broadcast_to(np.eye(d).ravel(), (n, d * d))], axis=1)
    out = integrate_batch(params, aug, t0, t1, spec)
    return out[:, :d], out[:, d:].reshape(n, d, d)


def integrate(H, z0, t0: float, t1: float, spec: FlowSpec = DEFAULT_SPEC):
    """Flow a single point; accepts a PhasePoint or a coordinate array."""
    as_point = isinstance(z0, PhasePoint)
    z = z0.as_array() if as_point else np.asarray(z0, dtype=float)
    out = integrate_batch(H, z[None, :], t0, t1, spec)[0]
    return PhasePoint.from_array(out) if as_point else out


class Section3Map:
    """Time-1 map of the block-stacked shear ``H~``."""

    def __init__(self, p: ScaleParams, spec: FlowSpec = DEFAULT_SPEC):
        self.p = p
        self.H = build_section3_H(p)
        self.spec = spec

    def __call__(self, Z, group=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return integrate_batch(self.H, Z, 0.0, 1.0, self.spec, group)

    def inverse(self, Z, group=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return integrate_batch(self.H, Z, 1.0, 0.0, self.spec, group)

    def jacobian(self, Z):
        """Derivative of the map at each row, shape (N, 4, 4)."""
        return tangent_batch(self.H, Z, 0.0, 1.0, self.spec)[1]


class ConjugatedBlockMap:
    """``phi_G o phi_F o phi_G^{-1}`` for block ``i`` in base-cell coordinates."""

    def __init__(self, p: ScaleParams, i: int, spec: FlowSpec = DEFAULT_SPEC):
        self.p = p
        self.i = i
        self.F = build_F(p)
        self.G = build_G(p, i)
        self.spec = spec

    def __call__(self, Z, group=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        z1 = integrate_batch(self.G, Z, 0.0, -1.0, self.spec, group)
        z2 = integrate_batch(self.F, z1, 0.0, 1.0, self.spec, group)
        return integrate_batch(self.G, z2, 0.0, 1.0, self.spec, group)

    def jacobian(self, Z):
        """Chain-rule product of the three flow derivatives, shape (N, 4, 4)."""
        z1, M1 = tangent_batch(self.G, Z, 0.0, -1.0, self.spec)
        z2, M2 = tangent_batch(self.F, z1, 0.0, 1.0, self.spec)
        _, M3 = tangent_batch(self.G, z2, 0.0, 1.0, self.spec)
        return M3 @ M2 @ M1


class Section4Map:
    """Time-1 map of ``H = sum_ij H_ij``, dispatching each point to its support cell."""

    def __init__(self, p: ScaleParams, spec: FlowSpec = DEFAULT_SPEC):
        self.p = p
        self.fam = region_family(p)
        self.spec = spec
        self.blocks = {i: ConjugatedBlockMap(p, i, spec) for i in range(1, p.k + 1)}

    def __call__(self, Z, group=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = Z.copy()
        ci, cj = self.fam.locate_support_cells(Z)
        for i in np.unique(ci[ci > 0]):
            rows = np.flatnonzero(ci == i)
            du = (i - 1) * self.p.eps
            dx = 4 * (i - 1) * self.p.delta + cj[rows] * self.p.eps
            local = Z[rows].copy()
            local[:, 0] -= du
            local[:, 2] -= dx
            g = None if group is None else np.asarray(group)[rows]
            moved = self.blocks[int(i)](local, group=g)
            res = moved.copy()
            res[:, 0] += du
            res[:, 2] += dx
            still = np.all(moved == local, axis=1)
            res[still] = Z[rows][still]
            out[rows] = res
        return out

    def jacobian(self, Z):
        """Derivative of the map at each row; the identity off the supports."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.broadcast_to(np.eye(4), (len(Z), 4, 4)).copy()
        ci, cj = self.fam.locate_support_cells(Z)
        for i in np.unique(ci[ci > 0]):
            rows = np.flatnonzero(ci == i)
            local = Z[rows].copy()
            local[:, 0] -= (i - 1) * self.p.eps
            local[:, 2] -= 4 * (i - 1) * self.p.delta + cj[rows] * self.p.eps
            out[rows] = self.blocks[int(i)].jacobian(local)
        return out


def section4_time1_map(fam: RegionFamily, Hs, z0, spec: FlowSpec = DEFAULT_SPEC):
    """Apply the global map to one point or a batch.

    ``Hs`` may be a prebuilt :class:`Section4Map` (reused) or None.
    """
    m = Hs if isinstance(Hs, Section4Map) else Section4Map(fam.p, spec)
    as_point = isinstance(z0, PhasePoint)
    Z = z0.as_array() if as_point else np.asarray(z0, dtype=float)
    out = m(np.atleast_2d(Z))
    if as_point:
        return PhasePoint.from_array(out[0])
    return out[0] if Z.ndim == 1 else out


@dataclass
class Trajectory:
    t: np.ndarray
    points: np.ndarray
    columns: tuple[str, ...] = ("x", "y")

    def __post_init__(self):
        if len(self.t) != len(self.points):
            raise ValueError("one point per time sample is required")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def at(self, t: float) -> np.ndarray:
        """The sample closest to time ``t``."""
        return self.points[int(np.argmin(np.abs(self.t - t)))]

    def to_csv(self, fh=None, fixed: Optional[dict] = None) -> str:
        """Write ``t,u,v,x,y`` rows; coordinates absent from ``columns`` come from ``fixed``."""
        fixed = dict(fixed or {})
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "u", "v", "x", "y"])
        idx = {c: m for m, c in enumerate(self.columns)}
        for t, z in zip(self.t, self.points):
            row = [repr(float(t))]
            for c in ("u", "v", "x", "y"):
                row.append(repr(float(z[idx[c]])) if c in idx else repr(float(fixed.get(c, 0.0))))
            w.writerow(row)
        return buf.getvalue() if fh is None else ""


def t_star(p: ScaleParams, i: int) -> float:
    """Time at which the reduced curve from ``(eps - delta, y_check + nu)`` reaches ``x = delta``."""
    return p.delta / g_coefficient(p, i) * math.log((p.eps - p.delta) / p.delta)


def reduced_trajectory(
    p: ScaleParams,
    i: int,
    x0: float,
    y0: float,
    spec: FlowSpec = DEFAULT_SPEC,
    t_span: tuple[float, float] = (0.0, 1.0),
    n_samples: int = 201,
    extra_times=(),
) -> Trajectory:
    """Samples of the planar system ``x' = -c g3 g4' x``, ``y' = c (g3' x + g3) g4``.

    Negative times are reached by integrating backwards from ``t = 0``.
    """
    if not (1 <= int(i) <= p.k):
        raise ValueError(f"block index i must lie in 1..{p.k}, got {i}")
    params = reduced_params(p, int(i))
    ts = np.union1d(np.linspace(t_span[0], t_span[1], n_samples), np.asarray(extra_times, float))
    ts = np.union1d(ts, [0.0]) if t_span[0] <= 0.0 <= t_span[1] else ts
    z0 = np.array([[x0, y0]], dtype=float)
    pts = np.empty((len(ts), 2))
    fwd = ts >= 0.0
    for mask, sign in ((fwd, 1.0), (~fwd, -1.0)):
        if not mask.any():
            continue
        targets = ts[mask]
        order = np.argsort(sign * targets)
        tt = np.ascontiguousarray(targets[order][None, :])
        out, status = kernels.integrate_times(
            params, z0, tt, 0.0, spec.rel_tol, spec.abs_tol, spec.max_step, int(spec.max_steps)
        )
        if status[0] != 0:
            raise IntegrationError(
                f"reduced trajectory failed: {STATUS_MESSAGES[int(status[0])]}", out[:, -1], status != 0
            )
        block = np.empty((mask.sum(), 2))
        block[order] = out[0]
        pts[mask] = block
    return Trajectory(ts, pts, ("x", "y"))


def jacobian_fd(map_fn, z, h: float, lockstep: bool = True) -> np.ndarray:
    """Central-difference Jacobian of a batch map at ``z``.

    With ``lockstep`` the stencil is integrated with a shared step sequence
    when the map supports it, so that step-size selection does not add noise.
    """
    z = np.asarray(z, dtype=float)
    d = len(z)
    stencil = np.repeat(z[None, :], 2 * d, axis=0)
    for m in range(d):
        stencil[2 * m, m] += h
        stencil[2 * m + 1, m] -= h
    if lockstep:
        try:
            img = map_fn(stencil, group=np.zeros(2 * d, dtype=np.int64))
        except TypeError:
            img = map_fn(stencil)
    else:
        img = map_fn(stencil)
    return np.stack([(img[2 * m] - img[2 * m + 1]) / (2 * h) for m in range(d)], axis=1)


def symplecticity_defect(map_fn, z, h: float = 1e-5, lockstep: bool = True) -> float:
    """``max |J^T Omega J - Omega|`` for the finite-difference Jacobian J at ``z``."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    J = jacobian_fd(map_fn, np.asarray(z, dtype=float), h, lockstep)
    return float(np.max(np.abs(J.T @ OMEGA @ J - OMEGA)))


def tangent_symplecticity_defect(map_obj, Z) -> np.ndarray:
    """``max |J^T Omega J - Omega|`` per row, with J from the variational equation."""
    J = map_obj.jacobian(np.atleast_2d(np.asarray(Z, dtype=float)))
    S = np.swapaxes(J, 1, 2) @ OMEGA @ J - OMEGA
    return np.abs(S).max(axis=(1, 2))


def lipschitz_estimate(map_fn, Z, h: float = 1e-6) -> float:
    """Largest operator norm of finite-difference Jacobians over the sample points."""
    best = 0.0
    for z in np.atleast_2d(Z):
        best = max(best, float(np.linalg.norm(jacobian_fd(map_fn, z, h), 2)))
    return best
