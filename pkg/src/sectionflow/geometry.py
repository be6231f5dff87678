"""Scale constants, rectangles, intervals and the translated region families.

Everything is derived from one integer ``k >= 2``::

    eps = pi / k,   delta = eps / (4k),   nu = delta / (4k)

The strip ``P = [0, pi] x [0, 1]`` in the ``(u, v)`` plane is cut into ``k``
blocks ``R_i`` of width ``eps``.  Each block carries nested insets
(``R'``, ``R''``, ``R^nu``) and two rectangular annuli ``A = R - R'`` and
``A' = R' - R''``.  Along the x axis the per-block intervals are repeated with
period ``eps`` and shifted by ``4 (i-1) delta`` so that supports belonging to
different blocks never line up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ScaleParams:
    k: int
    eps: float
    delta: float
    nu: float


def derive_scales(k: int) -> ScaleParams:
    if int(k) != k or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k!r}")
    k = int(k)
    eps = math.pi / k
    delta = eps / (4 * k)
    nu = delta / (4 * k)
    return ScaleParams(k, eps, delta, nu)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.lo) & (t <= self.hi)

    def shifted(self, s: float) -> "Interval":
        return Interval(self.lo + s, self.hi + s)

    def overlaps(self, other: "Interval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi


@dataclass(frozen=True)
class IntervalUnion:
    parts: tuple[Interval, ...]

    @property
    def length(self) -> float:
        return sum(p.length for p in self.parts)

    def contains(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for p in self.parts:
            out |= p.contains(t)
        return out

    def shifted(self, s: float) -> "IntervalUnion":
        return IntervalUnion(tuple(p.shifted(s) for p in self.parts))

    def overlaps(self, other) -> bool:
        others = other.parts if isinstance(other, IntervalUnion) else (other,)
        return any(p.overlaps(q) for p in self.parts for q in others)


@dataclass(frozen=True)
class Rect2:
    umin: float
    umax: float
    vmin: float
    vmax: float

    def __post_init__(self):
        if self.umin > self.umax or self.vmin > self.vmax:
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.umax - self.umin) * (self.vmax - self.vmin)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.umin + self.umax), 0.5 * (self.vmin + self.vmax))

    def contains(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= self.umin) & (u <= self.umax) & (v >= self.vmin) & (v <= self.vmax)

    def contains_open(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u > self.umin) & (u < self.umax) & (v > self.vmin) & (v < self.vmax)

    def shifted(self, du: float = 0.0, dv: float = 0.0) -> "Rect2":
        return Rect2(self.umin + du, self.umax + du, self.vmin + dv, self.vmax + dv)

    def inset(self, d: float) -> "Rect2":
        return Rect2(self.umin + d, self.umax - d, self.vmin + d, self.vmax - d)

    def intersection_area(self, other: "Rect2") -> float:
        w = min(self.umax, other.umax) - max(self.umin, other.umin)
        h = min(self.vmax, other.vmax) - max(self.vmin, other.vmin)
        return max(w, 0.0) * max(h, 0.0)


@dataclass(frozen=True)
class RectAnnulus:
    """Closure of ``outer`` minus the open interior of ``inner``."""

    outer: Rect2
    inner: Rect2

    @property
    def area(self) -> float:
        return self.outer.area - self.inner.area

    def contains(self, u, v):
        return self.outer.contains(u, v) & ~self.inner.contains_open(u, v)

    def shifted(self, du: float = 0.0, dv: float = 0.0) -> "RectAnnulus":
        return RectAnnulus(self.outer.shifted(du, dv), self.inner.shifted(du, dv))


@dataclass(frozen=True)
class RegionFamily:
    """All rectangles, intervals and marker heights for one value of ``k``.

    Per-block lists are indexed by ``i - 1``.  Interval families along x are
    generated on demand for any integer ``j`` by :meth:`x_shift`.
    """

    p: ScaleParams
    P: Rect2
    P_prime: Rect2
    Q: Optional[Rect2]
    P_nu: Rect2
    R: tuple[Rect2, ...]
    R1: tuple[Rect2, ...]
    R2: tuple[Rect2, ...]
    R_nu: tuple[Rect2, ...]
    A: tuple[RectAnnulus, ...]
    A1: tuple[RectAnnulus, ...]
    I: Interval
    I1: Interval
    I2: Interval
    J: IntervalUnion
    J1: IntervalUnion
    y_check: tuple[float, ...] = field(default=())
    y_hat: tuple[float, ...] = field(default=())

    @property
    def k(self) -> int:
        return self.p.k

    def x_shift(self, i: int, j: int) -> float:
        return 4 * (i - 1) * self.p.delta + j * self.p.eps

    def I_ij(self, i: int, j: int) -> Interval:
        return self.I.shifted(self.x_shift(i, j))

    def I1_ij(self, i: int, j: int) -> Interval:
        return self.I1.shifted(self.x_shift(i, j))

    def I2_ij(self, i: int, j: int) -> Interval:
        return self.I2.shifted(self.x_shift(i, j))

    def J_ij(self, i: int, j: int) -> IntervalUnion:
        return self.J.shifted(self.x_shift(i, j))

    def J1_ij(self, i: int, j: int) -> IntervalUnion:
        return self.J1.shifted(self.x_shift(i, j))

    def y_bands(self, i: int) -> IntervalUnion:
        """Height bands reached by images of block ``i`` (``i = 0`` is ``[0, 1]``)."""
        if i == 0:
            return IntervalUnion((Interval(0.0, 1.0),))
        eps, d = self.p.eps, self.p.delta
        yc, yh = self.y_check[i - 1], self.y_hat[i - 1]
        return IntervalUnion(
            (Interval(2.0 * i, 2.0 * i + 1.0), Interval(yc, yc + d), Interval(yh - eps, yh))
        )

    def y_band_overlaps(self) -> list[tuple[int, int]]:
        """Pairs ``(i, i')`` whose height bands intersect; empty when all are disjoint."""
        bands = [self.y_bands(i) for i in range(self.k + 1)]
        return [
            (a, b)
            for a in range(len(bands))
            for b in range(a + 1, len(bands))
            if bands[a].overlaps(bands[b])
        ]

    def block_of(self, u):
        """Block index ``i`` (1-based) whose strip ``[(i-1) eps, i eps)`` holds ``u``; 0 if none."""
        u = np.asarray(u, dtype=float)
        i = np.floor(u / self.p.eps).astype(np.int64) + 1
        i = np.where(u == math.pi, self.k, i)
        return np.where((i >= 1) & (i <= self.k), i, 0)

    def locate_support_cell(self, z) -> Optional[tuple[int, int]]:
        """The unique ``(i, j)`` with ``(u, v)`` in ``R^nu_i`` and ``x`` in ``I_ij``, or None."""
        i, j = self.locate_support_cells(np.asarray(z, dtype=float)[None, :])
        if i[0] == 0:
            return None
        return int(i[0]), int(j[0])

    def locate_support_cells(self, Z):
        """Vectorised :meth:`locate_support_cell`; returns ``(i, j)`` with ``i = 0`` for none.

        ``x`` is matched against the half-open cell ``[lo, hi)`` so that every x
        belongs to exactly one interval of a block.
        """
        Z = np.asarray(Z, dtype=float)
        u, v, x = Z[:, 0], Z[:, 1], Z[:, 2]
        i = np.clip(np.floor(u / self.p.eps).astype(np.int64) + 1, 1, self.k)
        lo = (i - 1) * self.p.eps + self.p.nu
        hi = i * self.p.eps - self.p.nu
        inside = (u >= lo) & (u <= hi) & (v >= self.p.nu) & (v <= 1.0 - self.p.nu)
        j = np.floor((x - 4 * (i - 1) * self.p.delta) / self.p.eps).astype(np.int64)
        return np.where(inside, i, 0), np.where(inside, j, 0)

    def x_cell(self, x):
        """Indices ``(i0, j0)`` of the cell ``[-2 delta, 2 delta)`` translate containing x."""
        x = np.asarray(x, dtype=float)
        r = x + 2.0 * self.p.delta
        j0 = np.floor(r / self.p.eps).astype(np.int64)
        i0 = np.floor((r - j0 * self.p.eps) / (4.0 * self.p.delta)).astype(np.int64) + 1
        i0 = np.clip(i0, 1, self.k)
        return i0, j0

    def annulus_union_area(self) -> float:
        """Exact area of ``A_i`` together with ``A'_i`` (both lie in one block)."""
        return self.R[0].area - self.R2[0].area


def region_family(p: ScaleParams) -> RegionFamily:
    k, eps, d, nu = p.k, p.eps, p.delta, p.nu
    P = Rect2(0.0, math.pi, 0.0, 1.0)
    base = Rect2(0.0, eps, 0.0, 1.0)
    R, R1, R2, Rn, A, A1 = [], [], [], [], [], []
    for i in range(1, k + 1):
        r = base.shifted((i - 1) * eps)
        r1, r2, rn = r.inset(d), r.inset(2 * d), r.inset(nu)
        R.append(r)
        R1.append(r1)
        R2.append(r2)
        Rn.append(rn)
        A.append(RectAnnulus(r, r1))
        A1.append(RectAnnulus(r1, r2))
    return RegionFamily(
        p=p,
        P=P,
        P_prime=P.inset(d),
        Q=P.inset(3 * d) if 6 * d < 1.0 else None,
        P_nu=P.inset(nu),
        R=tuple(R),
        R1=tuple(R1),
        R2=tuple(R2),
        R_nu=tuple(Rn),
        A=tuple(A),
        A1=tuple(A1),
        I=Interval(0.0, eps),
        I1=Interval(d, eps - d),
        I2=Interval(2 * d, eps - 2 * d),
        J=IntervalUnion((Interval(0.0, d), Interval(eps - d, eps))),
        J1=IntervalUnion((Interval(d, 2 * d), Interval(eps - 2 * d, eps - d))),
        y_check=tuple(1.0 + (2 * i - 1) * d for i in range(1, k + 1)),
        y_hat=tuple(2 * i - eps + 2 * i * d for i in range(1, k + 1)),
    )
