"""Hamiltonians on R^4 = {(u, v, x, y)} built from products of cutoffs.

The symplectic form is ``du ^ dv + dx ^ dy``.  With ``omega(X_H, .) = dH`` the
Hamiltonian vector field is ``X_H = (H_v, -H_u, H_y, -H_x)``.

Three families are provided:

* the block-stacked shear ``H~ = sum_i i H(u - (i-1) eps, v, x, y)`` with
  ``H = -f1(u) f2(v) (1 + eps) x``;
* ``F = -f1(u) f2(v) f3(x) (1 + eps) x``, whose energy is at most
  ``(1 + eps)(eps - delta)``;
* the conjugating Hamiltonians ``G_i = -g1(u) g2(v) g3(x) g4(y) (2i - 1 - eps) x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .cutoffs import PlateauCutoff, RampCutoff, make_plateau_cutoff, make_ramp_cutoff
from .geometry import ScaleParams, region_family

# matrix of du^dv + dx^dy in (u, v, x, y) coordinates
OMEGA = np.array(
    [[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class PhasePoint:
    u: float
    v: float
    x: float
    y: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"phase point has non-finite coordinates: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        return cls(float(z[0]), float(z[1]), float(z[2]), float(z[3]))


Box4 = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class HamiltonianDef:
    """A Hamiltonian with analytic gradient and a kernel parameter vector.

    ``support`` is a closed box containing the support, with infinite bounds on
    unconstrained axes.  ``sample_box`` is a finite box over which sampling sees
    every value the function takes; ``sample_axes`` lists the coordinates the
    function depends on.
    """

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    params: np.ndarray
    support: Box4
    sample_box: Box4
    sample_axes: tuple[int, ...]
    energy_bound: Optional[float] = None

    def __call__(self, Z):
        return _apply(self.evaluate, Z)

    def grad(self, Z):
        return _apply(self.gradient, Z)

    def in_support(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        ok = np.ones(len(Z), dtype=bool)
        for m, (lo, hi) in enumerate(self.support):
            ok &= (Z[:, m] >= lo) & (Z[:, m] <= hi)
        return ok


def _apply(fn, Z):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        return fn(Z[None, :])[0]
    return fn(Z)


def vector_field(H: HamiltonianDef, Z):
    """``X_H = (H_v, -H_u, H_y, -H_x)`` from the analytic gradient."""
    g = np.atleast_2d(H.grad(Z))
    X = np.stack([g[:, 1], -g[:, 0], g[:, 3], -g[:, 2]], axis=1)
    return X[0] if np.ndim(Z) == 1 else X


def kernel_field(H: HamiltonianDef, Z):
    """The same field as evaluated by the integration kernel."""
    Z2 = np.atleast_2d(np.asarray(Z, dtype=float))
    X = kernels.field(H.params, np.ascontiguousarray(Z2))
    return X[0] if np.ndim(Z) == 1 else X


@dataclass(frozen=True)
class Cutoffs:
    f1: PlateauCutoff
    f2: PlateauCutoff
    f3: PlateauCutoff
    g1: PlateauCutoff
    g2: PlateauCutoff
    g3: PlateauCutoff


def standard_cutoffs(p: ScaleParams) -> Cutoffs:
    eps, d, nu = p.eps, p.delta, p.nu
    return Cutoffs(
        f1=make_plateau_cutoff(d, 2 * d, eps - 2 * d, eps - d),
        f2=make_plateau_cutoff(d, 2 * d, 1 - 2 * d, 1 - d),
        f3=make_plateau_cutoff(d, 2 * d, eps - 2 * d, eps - d),
        g1=make_plateau_cutoff(nu, d, eps - d, eps - nu),
        g2=make_plateau_cutoff(nu, d, 1 - d, 1 - nu),
        g3=make_plateau_cutoff(0.0, d, eps - d, eps),
    )


def ramp_cutoff(p: ScaleParams, i: int) -> RampCutoff:
    fam = region_family(p)
    return make_ramp_cutoff(fam.y_check[i - 1], p.delta, p.nu)


def build_section3_H(p: ScaleParams) -> HamiltonianDef:
    """``H~(u,v,x,y) = sum_i i H(u - (i-1) eps, v, x, y)``, one block per strip."""
    cut = standard_cutoffs(p)
    f1, f2 = cut.f1, cut.f2
    eps, k, w = p.eps, p.k, 1.0 + p.eps

    def block(Z):
        i = np.floor(Z[:, 0] / eps).astype(np.int64) + 1
        i = np.where((i >= 1) & (i <= k), i, 0)
        ul = Z[:, 0] - (i - 1) * eps
        return i, ul

    def evaluate(Z):
        i, ul = block(Z)
        return -i * f1(ul) * f2(Z[:, 1]) * w * Z[:, 2]

    def gradient(Z):
        i, ul = block(Z)
        a, da = f1.evaluate(ul, with_deriv=True)
        b, db = f2.evaluate(Z[:, 1], with_deriv=True)
        x = Z[:, 2]
        s = -i * w
        return np.stack([s * da * b * x, s * a * db * x, s * a * b, np.zeros_like(x)], axis=1)

    d = p.delta
    return HamiltonianDef(
        name="stacked_shear",
        evaluate=evaluate,
        gradient=gradient,
        params=kernels.pack_params(
            kernels.SEC3, k=k, eps=eps, coef=w, c1=f1.params(), c2=f2.params()
        ),
        support=((d, np.pi - d), (d, 1 - d), (-np.inf, np.inf), (-np.inf, np.inf)),
        sample_box=((0.0, np.pi), (0.0, 1.0), (-1.0, 1.0), (0.0, 1.0)),
        sample_axes=(0, 1, 2),
        energy_bound=None,
    )


def build_F(p: ScaleParams) -> HamiltonianDef:
    """``F = -f1(u) f2(v) f3(x) (1 + eps) x`` on the first block, base cell of x."""
    cut = standard_cutoffs(p)
    f1, f2, f3 = cut.f1, cut.f2, cut.f3
    w = 1.0 + p.eps

    def evaluate(Z):
        return -f1(Z[:, 0]) * f2(Z[:, 1]) * f3(Z[:, 2]) * w * Z[:, 2]

    def gradient(Z):
        a, da = f1.evaluate(Z[:, 0], with_deriv=True)
        b, db = f2.evaluate(Z[:, 1], with_deriv=True)
        c, dc = f3.evaluate(Z[:, 2], with_deriv=True)
        x = Z[:, 2]
        return -w * np.stack(
            [da * b * c * x, a * db * c * x, a * b * (dc * x + c), np.zeros_like(x)], axis=1
        )

    eps, d = p.eps, p.delta
    return HamiltonianDef(
        name="F",
        evaluate=evaluate,
        gradient=gradient,
        params=kernels.pack_params(
            kernels.F, k=p.k, eps=eps, coef=w, c1=f1.params(), c2=f2.params(), c3=f3.params()
        ),
        support=((d, eps - d), (d, 1 - d), (d, eps - d), (-np.inf, np.inf)),
        sample_box=((0.0, eps), (0.0, 1.0), (0.0, eps), (0.0, 1.0)),
        sample_axes=(0, 1, 2),
        energy_bound=w * (eps - d),
    )


def g_coefficient(p: ScaleParams, i: int) -> float:
    return 2 * i - 1 - p.eps


def build_G(p: ScaleParams, i: int) -> HamiltonianDef:
    """``G_i = -g1(u) g2(v) g3(x) g4(y) (2i - 1 - eps) x`` on the first block, base cell."""
    if not (1 <= int(i) <= p.k):
        raise ValueError(f"block index i must lie in 1..{p.k}, got {i}")
    i = int(i)
    cut = standard_cutoffs(p)
    g1, g2, g3 = cut.g1, cut.g2, cut.g3
    g4 = ramp_cutoff(p, i)
    c = g_coefficient(p, i)

    def evaluate(Z):
        return -g1(Z[:, 0]) * g2(Z[:, 1]) * g3(Z[:, 2]) * g4(Z[:, 3]) * c * Z[:, 2]

    def gradient(Z):
        a, da = g1.evaluate(Z[:, 0], with_deriv=True)
        b, db = g2.evaluate(Z[:, 1], with_deriv=True)
        e, de = g3.evaluate(Z[:, 2], with_deriv=True)
        g, dg = g4.evaluate(Z[:, 3], with_deriv=True)
        x = Z[:, 2]
        return -c * np.stack(
            [da * b * e * g * x, a * db * e * g * x, a * b * (de * x + e) * g, a * b * e * dg * x],
            axis=1,
        )

    eps, nu, d = p.eps, p.nu, p.delta
    yc = g4.y_check
    return HamiltonianDef(
        name=f"G_{i}",
        evaluate=evaluate,
        gradient=gradient,
        params=kernels.pack_params(
            kernels.G,
            k=p.k,
            eps=eps,
            coef=c,
            c1=g1.params(),
            c2=g2.params(),
            c3=g3.params(),
            ramp=g4.params(),
        ),
        support=((nu, eps - nu), (nu, 1 - nu), (0.0, eps), (yc, np.inf)),
        sample_box=((0.0, eps), (0.0, 1.0), (0.0, eps), (yc - d, yc + 2 * d)),
        sample_axes=(0, 1, 2, 3),
        energy_bound=abs(c) * eps,
    )


def reduced_params(p: ScaleParams, i: int) -> np.ndarray:
    """Kernel parameters of the planar ``(x, y)`` system that G_i induces on ``R'``."""
    cut = standard_cutoffs(p)
    g4 = ramp_cutoff(p, i)
    return kernels.pack_params(
        kernels.RED, k=p.k, eps=p.eps, coef=g_coefficient(p, i), c3=cut.g3.params(),
        ramp=g4.params(),
    )


def level_params(p: ScaleParams) -> np.ndarray:
    """Unit-rate flow of ``(u, v)`` along level curves of ``f1(u) f2(v)``."""
    cut = standard_cutoffs(p)
    return kernels.pack_params(kernels.LEVEL, k=p.k, eps=p.eps, c1=cut.f1.params(),
                               c2=cut.f2.params())


def zero_hamiltonian() -> HamiltonianDef:
    return HamiltonianDef(
        name="zero",
        evaluate=lambda Z: np.zeros(len(Z)),
        gradient=lambda Z: np.zeros_like(Z),
        params=kernels.pack_params(kernels.ZERO),
        support=((0.0, 0.0),) * 4,
        sample_box=((0.0, 1.0),) * 4,
        sample_axes=(0, 1, 2, 3),
        energy_bound=0.0,
    )


def stratified_grid(box: Box4, axes, n: int) -> np.ndarray:
    """Cell-centred grid with ``n`` points along each axis in ``axes``; lower bound elsewhere."""
    axes = tuple(axes)
    lines = []
    for m, (lo, hi) in enumerate(box):
        if m in axes:
            lines.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
        else:
            lines.append(np.array([lo]))
    mesh = np.meshgrid(*lines, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def energy_norm(H: HamiltonianDef, n: int = 32, sampler=None) -> float:
    """Sampled ``sup H - inf H`` over a deterministic stratified grid (or a custom sampler)."""
    if n < 1:
        raise ValueError("n must be positive")
    Z = stratified_grid(H.sample_box, H.sample_axes, n) if sampler is None else sampler(H)
    vals = H(Z)
    return float(vals.max() - vals.min())
