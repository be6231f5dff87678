"""Outer and hull measures of planar sections of images of product sets.

A section is the set of ``(u, v)`` reached by image points whose ``(x, y)``
falls in one slab.  Two engines produce per-slab measures:

* :func:`pushforward_sample` + :func:`slab_measures` map a stratified sample
  forward with any time-1 map, bin images by slab and rasterise.  Generic but
  it samples y, so it is only practical on coarse grids.
* :func:`section_sweep` uses the fibred form of the two constructions.  On a
  block, ``(u, v)`` moves along a level curve of ``lambda = f1(u) f2(v)`` for a
  time ``tau`` that depends on x alone, and y is shifted by ``s(x) lambda``
  (followed, for the conjugated map, by the planar ramp map in y).  Each source
  ``(u, v, x)`` therefore sweeps an exact y-interval of slabs, and the sweep
  kernel only adds and removes raster stamps as the slab index advances.

When the base rectangle contains every level curve of ``lambda``, the image
section equals the set of sources whose ``lambda`` hits the slab, so sources are
stamped in place (no flow needed).  Otherwise the level flow is integrated.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .flow import DEFAULT_SPEC, FlowSpec, IntegrationError, Section3Map, Section4Map
from .geometry import Interval, Rect2, ScaleParams, derive_scales, region_family
from .hamiltonians import (
    build_F,
    energy_norm,
    g_coefficient,
    level_params,
    reduced_params,
    standard_cutoffs,
)

SCHEMA = 1
CONSTRUCTIONS = ("section3", "section4")
DEFAULT_SAMPLE_CAP = 50_000_000


class RasterBoundsError(RuntimeError):
    """Occupied cells reached the outer ring of the raster; enlarge the bounds."""


class SampleBudgetError(RuntimeError):
    """The requested sampling density exceeds the configured sample cap."""


@dataclass(frozen=True)
class ProductSet:
    """``base x x_window x y_window`` with ``base`` a rectangle in ``(u, v)``."""

    base: Rect2
    x_window: Interval
    y_window: Interval = Interval(0.0, 1.0)

    @property
    def volume(self) -> float:
        return self.base.area * self.x_window.length * self.y_window.length


def compress_y(x, y):
    """Map ``R x R`` into ``R x (0, 1)`` by ``(x / f'(y), f(y))`` with the logistic f.

    The map preserves ``dx ^ dy`` and sends unbounded y windows to bounded ones.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f = 0.5 * (1.0 + np.tanh(0.5 * y))
    # 1 / f'(y) = 4 cosh^2(y / 2), without the cancellation in f (1 - f)
    return x * (2.0 * np.cosh(0.5 * y)) ** 2, f


# ---------------------------------------------------------------- rasters


@dataclass
class RasterGrid:
    """Square-cell occupancy raster over ``bounds``; ``occupancy[iy, ix]``."""

    bounds: Rect2
    nx: int
    ny: int
    occupancy: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("a raster needs at least 3 cells per axis")
        if self.occupancy is None:
            self.occupancy = np.zeros((self.ny, self.nx), dtype=np.uint8)
        elif self.occupancy.shape != (self.ny, self.nx):
            raise ValueError("occupancy shape does not match the raster size")

    @classmethod
    def covering(cls, region: Rect2, grid_res: int, pad: int = 2) -> "RasterGrid":
        """Raster with ``grid_res`` square cells across the u-extent of ``region``.

        ``pad`` empty cells are added on every side so that the hull flood fill
        has an exterior to start from.
        """
        if grid_res < 1 or pad < 1:
            raise ValueError("grid_res and pad must be positive")
        cell = (region.umax - region.umin) / grid_res
        if cell <= 0:
            raise ValueError("region has zero width")
        rows = max(1, int(math.ceil((region.vmax - region.vmin) / cell - 1e-9)))
        bounds = Rect2(
            region.umin - pad * cell,
            region.umin + (grid_res + pad) * cell,
            region.vmin - pad * cell,
            region.vmin + (rows + pad) * cell,
        )
        return cls(bounds, grid_res + 2 * pad, rows + 2 * pad)

    @property
    def cell(self) -> float:
        return (self.bounds.umax - self.bounds.umin) / self.nx

    @property
    def cell_area(self) -> float:
        return self.cell * self.cell

    def to_cells(self, u, v):
        """Continuous cell coordinates; cell ``(ix, iy)`` spans ``[ix, ix+1) x [iy, iy+1)``."""
        c = self.cell
        return (np.asarray(u, float) - self.bounds.umin) / c, (np.asarray(v, float) - self.bounds.vmin) / c

    def centers(self):
        """Cell-centre coordinates ``(U, V)`` as 2-D arrays."""
        c = self.cell
        u = self.bounds.umin + (np.arange(self.nx) + 0.5) * c
        v = self.bounds.vmin + (np.arange(self.ny) + 0.5) * c
        return np.meshgrid(u, v)

    def add_points(self, u, v, radius: float = 0.0) -> "RasterGrid":
        """Mark the cell of each point and every cell whose centre is within ``radius``."""
        px, py = self.to_cells(np.atleast_1d(u), np.atleast_1d(v))
        occ, bad = kernels.stamp_points(
            np.ascontiguousarray(px, dtype=float), np.ascontiguousarray(py, dtype=float),
            self.nx, self.ny, float(radius) / self.cell,
        )
        if bad:
            raise RasterBoundsError("stamped points reach the raster boundary ring")
        self.occupancy |= occ
        return self

    def add_predicate(self, inside) -> "RasterGrid":
        """Mark every cell whose centre satisfies ``inside(u, v)``."""
        U, V = self.centers()
        self.occupancy |= np.asarray(inside(U, V), dtype=bool).astype(np.uint8)
        return self

    @property
    def occupied_cells(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def outer_measure(self) -> float:
        return self.occupied_cells * self.cell_area

    def hull_measure(self) -> float:
        return simply_connected_hull(self)

    def to_pgm(self, fh) -> None:
        """Binary PGM (P5, maxval 255), top row = largest v; occupied cells are black."""
        img = np.where(self.occupancy[::-1] > 0, 0, 255).astype(np.uint8)
        fh.write(f"P5\n{self.nx} {self.ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def simply_connected_hull(grid: RasterGrid) -> float:
    """Area of the occupied cells together with every enclosed empty region.

    The exterior is flood-filled (4-connected) from a ring around the bounding
    box; the hull is what the flood does not reach.
    """
    occ = np.ascontiguousarray(grid.occupancy, dtype=np.uint8)
    _, hull, status = kernels.hull_cells(occ)
    if status:
        raise RasterBoundsError("occupied cells touch the raster boundary ring")
    return hull * grid.cell_area


# ---------------------------------------------------------------- reports


@dataclass
class SectionReport:
    """Per-slab measures; slab ``(a, b)`` is x-column ``a`` and y-range ``[b h, (b+1) h)``."""

    slab_h: float
    cell_area: float
    a: np.ndarray
    b: np.ndarray
    outer: np.ndarray
    hull: np.ndarray
    column_x: Optional[np.ndarray] = None
    energy: float = 0.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, slab_h: float, cell_area: float = 0.0, **kw) -> "SectionReport":
        z = np.zeros(0, dtype=np.int64)
        return cls(slab_h, cell_area, z, z.copy(), np.zeros(0), np.zeros(0), **kw)

    @property
    def n_slabs(self) -> int:
        return len(self.a)

    @property
    def has_hull(self) -> bool:
        return self.n_slabs > 0 and not np.isnan(self.hull).all()

    @property
    def sup_outer(self) -> float:
        return float(self.outer.max()) if self.n_slabs else 0.0

    @property
    def sup_hull(self) -> float:
        return float(np.nanmax(self.hull)) if self.has_hull else 0.0

    def _argmax(self, values) -> Optional[tuple[int, int]]:
        if not self.n_slabs or np.isnan(values).all():
            return None
        m = int(np.nanargmax(values))
        return int(self.a[m]), int(self.b[m])

    @property
    def argmax_outer(self):
        return self._argmax(self.outer)

    @property
    def argmax_hull(self):
        return self._argmax(self.hull)

    @property
    def sigma_upper(self) -> float:
        return self.sup_outer + self.energy

    @property
    def sigma_hat_upper(self) -> float:
        return self.sup_hull + self.energy

    def slab_y(self, b) -> np.ndarray:
        return np.asarray(b) * self.slab_h

    def summary(self) -> dict:
        return {
            "n_slabs": self.n_slabs,
            "sup_outer": self.sup_outer,
            "argmax_outer": self.argmax_outer,
            "sup_hull": self.sup_hull if self.has_hull else None,
            "argmax_hull": self.argmax_hull,
            "energy": self.energy,
            "sigma_upper": self.sigma_upper,
            "sigma_hat_upper": self.sigma_hat_upper if self.has_hull else None,
        }

    def to_dict(self, include_slabs: bool = True) -> dict:
        out = {
            "schema": SCHEMA,
            "slab_h": self.slab_h,
            "cell_area": self.cell_area,
            **self.summary(),
            "meta": _jsonable(self.meta),
        }
        if self.column_x is not None:
            out["column_x"] = [float(x) for x in self.column_x]
        if include_slabs:
            out["slabs"] = [
                {"a": int(a), "b": int(b), "outer": float(o), "hull": None if np.isnan(h) else float(h)}
                for a, b, o, h in zip(self.a, self.b, self.outer, self.hull)
            ]
        return out

    def to_json(self, include_slabs: bool = True) -> str:
        return json.dumps(self.to_dict(include_slabs), indent=2, sort_keys=True)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "b", "x", "y_lo", "outer", "hull"])
        for a, b, o, h in zip(self.a, self.b, self.outer, self.hull):
            x = self.column_x[a] if self.column_x is not None and 0 <= a < len(self.column_x) else a * self.slab_h
            w.writerow([int(a), int(b), repr(float(x)), repr(float(b * self.slab_h)), repr(float(o)),
                        "" if np.isnan(h) else repr(float(h))])
        return buf.getvalue() if fh is None else ""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# ---------------------------------------------------------------- generic engine


@dataclass
class PointCloud:
    sources: np.ndarray
    images: np.ndarray


def _axis_samples(iv: Interval, density: float) -> np.ndarray:
    n = max(1, int(math.ceil(iv.length * density - 1e-9)))
    return iv.lo + (np.arange(n) + 0.5) * (iv.length / n)


def pushforward_sample(map_fn, S: ProductSet, density: float, cap: int = DEFAULT_SAMPLE_CAP,
                       batch: int = 200_000) -> PointCloud:
    """Cell-centred stratified grid over ``S`` (``density`` samples per unit length), mapped forward."""
    if density <= 0:
        raise ValueError("density must be positive")
    axes = [
        _axis_samples(Interval(S.base.umin, S.base.umax), density),
        _axis_samples(Interval(S.base.vmin, S.base.vmax), density),
        _axis_samples(S.x_window, density),
        _axis_samples(S.y_window, density),
    ]
    count = math.prod(len(a) for a in axes)
    if count > cap:
        raise SampleBudgetError(f"{count} samples exceed the cap of {cap}")
    grids = np.meshgrid(*axes, indexing="ij")
    src = np.stack([g.ravel() for g in grids], axis=1)
    img = np.empty_like(src)
    for s in range(0, len(src), batch):
        img[s : s + batch] = map_fn(src[s : s + batch])
    return PointCloud(src, img)


def _records_from_entries(ent_a, ent_bs, ent_be, ent_pt):
    """Group point entries with identical ``(a, bs, be)`` into contiguous range records."""
    if len(ent_a) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z, z, z
    order = np.lexsort((ent_pt, ent_be, ent_bs, ent_a))
    a, bs, be = ent_a[order], ent_bs[order], ent_be[order]
    change = np.ones(len(a), dtype=bool)
    change[1:] = (a[1:] != a[:-1]) | (bs[1:] != bs[:-1]) | (be[1:] != be[:-1])
    starts = np.flatnonzero(change)
    ends = np.append(starts[1:], len(a))
    return a[starts], bs[starts], be[starts], starts, ends, ent_pt[order]


@dataclass
class _Sweep:
    """Records ready for :func:`kernels.sweep_slabs`."""

    grid: RasterGrid
    radius: float
    rec_a: np.ndarray
    rec_bs: np.ndarray
    rec_be: np.ndarray
    rec_kind: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray
    pts_x: np.ndarray
    pts_y: np.ndarray
    grp_cells: np.ndarray

    def run(self, want_hull: bool):
        a, b, o, h, status = kernels.sweep_slabs(
            self.rec_a.astype(np.int32), self.rec_bs.astype(np.int32), self.rec_be.astype(np.int32),
            self.rec_kind.astype(np.int8), self.rec_lo.astype(np.int64), self.rec_hi.astype(np.int64),
            np.ascontiguousarray(self.pts_x, dtype=float), np.ascontiguousarray(self.pts_y, dtype=float),
            self.grp_cells.astype(np.int32), self.grid.nx, self.grid.ny, float(self.radius / self.grid.cell),
            bool(want_hull),
        )
        if status & 1:
            raise RasterBoundsError("section images reach the raster boundary ring")
        if status & 2:
            raise RuntimeError("slab sweep left stamps behind; record ranges are inconsistent")
        return a, b, o, h

    def raster(self, a: int, b: int) -> RasterGrid:
        """Occupancy of one slab, rebuilt from the records."""
        grid = RasterGrid(self.grid.bounds, self.grid.nx, self.grid.ny)
        live = np.flatnonzero((self.rec_a == a) & (self.rec_bs <= b) & (self.rec_be >= b))
        r = self.radius / self.grid.cell
        flat = grid.occupancy.reshape(-1)
        for q in live:
            lo, hi = int(self.rec_lo[q]), int(self.rec_hi[q])
            if self.rec_kind[q] == 0:
                occ, _ = kernels.stamp_points(
                    np.ascontiguousarray(self.pts_x[lo:hi]), np.ascontiguousarray(self.pts_y[lo:hi]),
                    grid.nx, grid.ny, r,
                )
                grid.occupancy |= occ
            else:
                flat[self.grp_cells[lo:hi]] = 1
        return grid


def slab_measures(cloud: PointCloud, slab_h: float, grid_res: int, dilation: float,
                  region: Optional[Rect2] = None, want_hull: bool = True) -> SectionReport:
    """Bin image points into ``slab_h x slab_h`` slabs of ``(x, y)`` and measure each section.

    Every point is stamped as a disc of radius ``dilation`` (plus its own cell).
    ``region`` fixes the raster extent in ``(u, v)``; by default it is the
    bounding box of the images.
    """
    if slab_h <= 0:
        raise ValueError("slab_h must be positive")
    if dilation < 0:
        raise ValueError("dilation must be non-negative")
    img = np.asarray(cloud.images, dtype=float)
    if len(img) == 0:
        return SectionReport.empty(slab_h)
    if region is None:
        lo, hi = img[:, :2].min(axis=0), img[:, :2].max(axis=0)
        span = max(hi[0] - lo[0], hi[1] - lo[1], 1e-12)
        region = Rect2(lo[0], lo[0] + span, lo[1], max(hi[1], lo[1] + 1e-12))
    probe = RasterGrid.covering(region, grid_res)
    pad = int(math.ceil(dilation / probe.cell)) + 2
    grid = RasterGrid.covering(region, grid_res, pad)
    a = np.floor(img[:, 2] / slab_h).astype(np.int64)
    b = np.floor(img[:, 3] / slab_h).astype(np.int64)
    ra, rbs, rbe, lo, hi, pt = _records_from_entries(a, b, b, np.arange(len(img), dtype=np.int64))
    px, py = grid.to_cells(img[pt, 0], img[pt, 1])
    sweep = _Sweep(grid, dilation, ra, rbs, rbe, np.zeros(len(ra), np.int8), lo, hi, px, py,
                   np.zeros(0, np.int32))
    sa, sb, so, sh = sweep.run(want_hull)
    hull = sh * grid.cell_area if want_hull else np.full(len(sa), np.nan)
    return SectionReport(slab_h, grid.cell_area, sa, sb, so * grid.cell_area, hull,
                         meta={"engine": "binned", "grid_res": grid_res, "dilation": dilation})


# ---------------------------------------------------------------- fibred engine


@dataclass
class _BandTable:
    """Slab runs of the planar ramp map applied to ``(xi, eta)`` for eta in ``[y_check, top]``.

    Run ``r`` covers ``eta_start[r] <= eta <= eta_start[r+1]`` (closed at both
    ends, the last one up to ``top``).
    """

    eta_start: np.ndarray
    col: np.ndarray
    b: np.ndarray
    top: float
    shift: float


def _band_tables(p: ScaleParams, i: int, xi: np.ndarray, x_abs: np.ndarray, slab_h: float,
                 n_cols: int, spec: FlowSpec, n0: int = 257, max_rounds: int = 24):
    """Tabulate the ramp-band part of the planar map of block ``i`` for every column.

    Samples are refined until consecutive samples fall in the same or
    neighbouring slabs, so no slab visited by a curve is skipped.
    """
    fam = region_family(p)
    yc = fam.y_check[i - 1]
    c = g_coefficient(p, i)
    cut = standard_cutoffs(p)
    g3, dg3 = cut.g3.evaluate(xi, with_deriv=True)
    shift = c * (dg3 * xi + g3)
    top = yc + p.delta + np.maximum(0.0, -shift)
    params = reduced_params(p, i)
    eps = p.eps

    def slabs(col_idx, x_end, y_end):
        xa = np.mod(x_abs[col_idx] + (x_end - xi[col_idx]), eps)
        a = np.minimum(np.floor(xa / slab_h).astype(np.int64), n_cols - 1)
        return a, np.floor(y_end / slab_h).astype(np.int64)

    def image(col_idx, eta):
        Z = np.ascontiguousarray(np.stack([xi[col_idx], eta], axis=1))
        out, status, _ = kernels.integrate(params, Z, 0.0, 1.0, spec.rel_tol, spec.abs_tol,
                                           spec.max_step, int(spec.max_steps))
        if np.any(status != 0):
            raise IntegrationError("planar ramp map failed", out, status != 0)
        return slabs(col_idx, out[:, 0], out[:, 1])

    ncol = len(xi)
    t = np.linspace(0.0, 1.0, n0)
    cols = np.repeat(np.arange(ncol), n0)
    etas = (yc + t[None, :] * (top[:, None] - yc)).ravel()
    a, b = image(cols, etas)
    per = [(etas[m * n0 : (m + 1) * n0], a[m * n0 : (m + 1) * n0], b[m * n0 : (m + 1) * n0])
           for m in range(ncol)]
    for _ in range(max_rounds):
        need_c, need_e = [], []
        for m, (e, aa, bb) in enumerate(per):
            da = np.abs(np.diff(aa))
            da = np.minimum(da, n_cols - da)
            gap = (np.maximum(da, np.abs(np.diff(bb))) > 1) & (np.diff(e) > 1e-13)
            if gap.any():
                mids = 0.5 * (e[:-1][gap] + e[1:][gap])
                need_c.append(np.full(len(mids), m))
                need_e.append(mids)
        if not need_c:
            break
        nc, ne = np.concatenate(need_c), np.concatenate(need_e)
        na, nb = image(nc, ne)
        for m in np.unique(nc):
            sel = nc == m
            e, aa, bb = per[m]
            e2 = np.concatenate([e, ne[sel]])
            o = np.argsort(e2, kind="stable")
            per[m] = (e2[o], np.concatenate([aa, na[sel]])[o], np.concatenate([bb, nb[sel]])[o])
    tables = []
    for m, (e, aa, bb) in enumerate(per):
        keep = np.ones(len(e), dtype=bool)
        keep[1:] = (aa[1:] != aa[:-1]) | (bb[1:] != bb[:-1])
        tables.append(_BandTable(e[keep], aa[keep], bb[keep], float(top[m]), float(shift[m])))
    return tables


_BAND_CACHE: dict = {}


def _period_columns(p: ScaleParams, h: float, n_cols: int) -> np.ndarray:
    """Representative x of each slab of the period ``[0, eps)`` (its centre, kept inside)."""
    return np.minimum((np.arange(n_cols) + 0.5) * h, p.eps - 0.25 * h)


def _cached_band_tables(p: ScaleParams, i: int, h: float, n_cols: int, spec: FlowSpec):
    key = (p.k, i, h, n_cols, spec)
    if key not in _BAND_CACHE:
        column_x = _period_columns(p, h, n_cols)
        xi = np.mod(column_x - 4 * (i - 1) * p.delta, p.eps)
        _BAND_CACHE[key] = _band_tables(p, i, xi, column_x, h, n_cols, spec)
    return _BAND_CACHE[key]


def _slab_index(y, h):
    return np.floor(np.asarray(y) / h).astype(np.int64)


def _split_pieces(lo, hi, col, table: Optional[_BandTable], y_check: float, h: float,
                  skip_full: bool = False):
    """Slab ranges ``(a, bs, be, owner)`` covered by image y-intervals ``[lo, hi]``.

    Without a band table the image interval is ``[lo, hi]`` itself.  With one,
    the part below ``y_check`` is fixed, the part above ``top`` is translated,
    and the part inside the band follows the tabulated curve.  With
    ``skip_full`` the band part of intervals spanning the whole band is left
    out; those owners all visit every run of the table.
    """
    n = len(lo)
    owner = np.arange(n, dtype=np.int64)
    if table is None:
        return (np.full(n, col, np.int64), _slab_index(lo, h), _slab_index(hi, h), owner)
    parts_a, parts_bs, parts_be, parts_o = [], [], [], []
    below = lo < y_check
    if below.any():
        parts_a.append(np.full(below.sum(), col, np.int64))
        parts_bs.append(_slab_index(lo[below], h))
        parts_be.append(_slab_index(np.minimum(hi[below], y_check), h))
        parts_o.append(owner[below])
    above = hi > table.top
    if above.any():
        parts_a.append(np.full(above.sum(), col, np.int64))
        parts_bs.append(_slab_index(np.maximum(lo[above], table.top) + table.shift, h))
        parts_be.append(_slab_index(hi[above] + table.shift, h))
        parts_o.append(owner[above])
    e0 = np.maximum(lo, y_check)
    e1 = np.minimum(hi, table.top)
    mid = e0 <= e1
    if skip_full:
        mid &= ~((lo <= y_check) & (hi >= table.top))
    if mid.any():
        starts = table.eta_start
        r0 = np.maximum(np.searchsorted(starts, e0[mid], side="right") - 1, 0)
        r1 = np.searchsorted(starts, e1[mid], side="right")
        counts = r1 - r0
        own = np.repeat(owner[mid], counts)
        base = np.repeat(r0 - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        runs = base + np.arange(counts.sum())
        parts_a.append(table.col[runs])
        parts_bs.append(table.b[runs])
        parts_be.append(table.b[runs])
        parts_o.append(own)
    if not parts_a:
        z = np.zeros(0, np.int64)
        return z, z, z, z
    return (np.concatenate(parts_a), np.concatenate(parts_bs), np.concatenate(parts_be),
            np.concatenate(parts_o))


@dataclass
class SweepResult:
    report: SectionReport
    sweep: _Sweep

    def raster(self, a: int, b: int) -> RasterGrid:
        return self.sweep.raster(a, b)


def default_slab(p: ScaleParams) -> float:
    return 0.5 * p.delta


def base_rect(construction: str, set_kind: str, p: ScaleParams) -> Optional[Rect2]:
    """``P'`` (section3) or ``P^nu`` (section4) for the P set, ``Q`` for the Q set."""
    fam = region_family(p)
    if set_kind == "P":
        return fam.P_prime if construction == "section3" else fam.P_nu
    if set_kind == "Q":
        return fam.Q
    raise ValueError(f"set kind must be 'P' or 'Q', got {set_kind!r}")


def section_sweep(construction: str, p: ScaleParams, base: Rect2, *, grid_res: int = 1024,
                  density: float = 1.0, slab_h: Optional[float] = None, dilation: float = 0.75,
                  want_hull: bool = True, x_samples: int = 4, in_place: Optional[bool] = None,
                  spec: FlowSpec = DEFAULT_SPEC) -> SweepResult:
    """Per-slab measures of sections of ``construction`` applied to ``base x window x [0, 1]``.

    ``density`` is the number of source samples per raster cell side and
    ``dilation`` the stamp radius in units of the source spacing.  For
    ``section3`` the x window is ``[0, slab_h]`` with ``x_samples`` columns,
    each an exact x value (the map preserves x).  For ``section4`` the columns
    are the slabs of one x period ``[0, eps)``; sources sit at column centres and
    ramp-band images land in whichever column their x reaches.
    ``in_place`` stamps sources instead of flowing them; it defaults to True when
    ``base`` contains every block's ``R'``.
    """
    if construction not in CONSTRUCTIONS:
        raise ValueError(f"construction must be one of {CONSTRUCTIONS}, got {construction!r}")
    if density <= 0 or dilation < 0 or grid_res < 8:
        raise ValueError("density must be positive, dilation non-negative, grid_res >= 8")
    h = default_slab(p) if slab_h is None else float(slab_h)
    if h <= 0:
        raise ValueError("slab_h must be positive")
    fam = region_family(p)
    eps = p.eps
    contains_all = all(
        base.umin <= r.umin and r.umax <= base.umax and base.vmin <= r.vmin and r.vmax <= base.vmax
        for r in fam.R1
    )
    if in_place is None:
        in_place = contains_all
    elif in_place and not contains_all:
        raise ValueError("in-place stamping needs a base containing every block's R'")

    probe = RasterGrid.covering(fam.P, grid_res)
    spacing = probe.cell / density
    radius = dilation * spacing
    grid = RasterGrid.covering(fam.P, grid_res, pad=int(math.ceil(radius / probe.cell)) + 2)

    # sources: sub-cell centres of the raster that lie in the closed base rectangle
    sub = (np.arange(int(round(grid.nx * density))) + 0.5) * spacing + grid.bounds.umin
    subv = (np.arange(int(round(grid.ny * density))) + 0.5) * spacing + grid.bounds.vmin
    su = sub[(sub >= base.umin) & (sub <= base.umax)]
    sv = subv[(subv >= base.vmin) & (subv <= base.vmax)]
    U, V = np.meshgrid(su, sv)
    U, V = U.ravel(), V.ravel()
    blk = np.clip(np.floor(U / eps).astype(np.int64) + 1, 1, p.k)
    cut = standard_cutoffs(p)
    lam = cut.f1(U - (blk - 1) * eps) * cut.f2(V)
    inside_P = (U >= 0.0) & (U <= math.pi)
    lam = np.where(inside_P, lam, 0.0)

    # columns
    if construction == "section3":
        n_cols = int(x_samples)
        column_x = (np.arange(n_cols) + 0.5) * (h / n_cols)
    else:
        n_cols = int(math.ceil(eps / h - 1e-9))
        column_x = _period_columns(p, h, n_cols)

    groups = []  # cell index arrays for kind-1 records
    grp_entries = []  # (a, bs, be, group id)
    rec = {"a": [], "bs": [], "be": [], "lo": [], "hi": []}
    chunks_x, chunks_y = [], []
    n_pts = 0

    def cells_of(u, v):
        occ, bad = kernels.stamp_points(*(np.ascontiguousarray(c) for c in grid.to_cells(u, v)),
                                        grid.nx, grid.ny, radius / grid.cell)
        if bad:
            raise RasterBoundsError("sources reach the raster boundary ring")
        return np.flatnonzero(occ.reshape(-1)).astype(np.int32)

    def add_point_records(pa, pbs, pbe, u, v):
        nonlocal n_pts
        ra, rbs, rbe, rlo, rhi, order = _records_from_entries(pa, pbs, pbe, np.arange(len(pa)))
        px, py = grid.to_cells(u[order], v[order])
        chunks_x.append(px)
        chunks_y.append(py)
        for key, val in (("a", ra), ("bs", rbs), ("be", rbe), ("lo", rlo + n_pts), ("hi", rhi + n_pts)):
            rec[key].append(val)
        n_pts += len(order)

    fixed = lam == 0.0
    if fixed.any():
        groups.append(cells_of(U[fixed], V[fixed]))
        gid = len(groups) - 1
        grp_entries.append((np.arange(n_cols), np.full(n_cols, _slab_index(0.0, h)),
                            np.full(n_cols, _slab_index(1.0, h)), np.full(n_cols, gid)))

    level = level_params(p)
    for i in range(1, p.k + 1):
        inb = blk == i
        plateau = inb & (lam == 1.0)
        ring = np.flatnonzero(inb & (lam > 0.0) & (lam < 1.0))
        if construction == "section3":
            w = i * (1.0 + eps)
            tau = w * column_x
            s = np.full(n_cols, w)
            tables = [None] * n_cols
            yc = math.inf
        else:
            xi = np.mod(column_x - 4 * (i - 1) * p.delta, eps)
            f3, df3 = cut.f3.evaluate(xi, with_deriv=True)
            tau = (1.0 + eps) * f3 * xi
            s = (1.0 + eps) * (df3 * xi + f3)
            tables = _cached_band_tables(p, i, h, n_cols, spec)
            yc = fam.y_check[i - 1]
        if plateau.any():
            groups.append(cells_of(U[plateau], V[plateau]))
            gid = len(groups) - 1
            for a in range(n_cols):
                pa, pbs, pbe, _ = _split_pieces(np.array([s[a]]), np.array([s[a] + 1.0]), a,
                                                tables[a], yc, h)
                grp_entries.append((pa, pbs, pbe, np.full(len(pa), gid)))
        if len(ring) == 0:
            continue
        lam_r = lam[ring]
        if not in_place:
            taus, inv = np.unique(tau, return_inverse=True)
            Z = np.ascontiguousarray(np.stack([U[ring] - (i - 1) * eps, V[ring]], axis=1))
            T = np.ascontiguousarray(np.broadcast_to(taus, (len(ring), len(taus))))
            flowed, status = kernels.integrate_times(level, Z, T, 0.0, spec.rel_tol, spec.abs_tol,
                                                     spec.max_step, int(spec.max_steps))
            if np.any(status != 0):
                raise IntegrationError("level flow failed", flowed[:, -1], status != 0)
        for a in range(n_cols):
            if in_place:
                iu, iv = U[ring], V[ring]
            else:
                iu = flowed[:, inv[a], 0] + (i - 1) * eps
                iv = flowed[:, inv[a], 1]
            lo = s[a] * lam_r
            hi = lo + 1.0
            pa, pbs, pbe, own = _split_pieces(lo, hi, a, tables[a], yc, h, skip_full=True)
            add_point_records(pa, pbs, pbe, iu[own], iv[own])
            tab = tables[a]
            if tab is None:
                continue
            full = (lo <= yc) & (hi >= tab.top)
            if full.any():
                # identical band runs: one precomputed cell group for all of them
                groups.append(cells_of(iu[full], iv[full]))
                gid = len(groups) - 1
                nr = len(tab.col)
                grp_entries.append((tab.col.astype(np.int64), tab.b, tab.b, np.full(nr, gid)))

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    ra, rbs, rbe = cat(rec["a"], np.int64), cat(rec["bs"], np.int64), cat(rec["be"], np.int64)
    rlo, rhi = cat(rec["lo"], np.int64), cat(rec["hi"], np.int64)
    px, py = cat(chunks_x, float), cat(chunks_y, float)

    offsets = np.concatenate([[0], np.cumsum([len(g) for g in groups])]).astype(np.int64)
    grp_cells = cat(groups, np.int32)
    ga = cat([g[0] for g in grp_entries], np.int64)
    gbs = cat([g[1] for g in grp_entries], np.int64)
    gbe = cat([g[2] for g in grp_entries], np.int64)
    gid = cat([g[3] for g in grp_entries], np.int64)

    sweep = _Sweep(
        grid, radius,
        np.concatenate([ra, ga]),
        np.concatenate([rbs, gbs]),
        np.concatenate([rbe, gbe]),
        np.concatenate([np.zeros(len(ra), np.int8), np.ones(len(ga), np.int8)]),
        np.concatenate([rlo, offsets[gid]]),
        np.concatenate([rhi, offsets[gid + 1]]),
        px, py, grp_cells,
    )
    sa, sb, so, sh = sweep.run(want_hull)
    hull = sh * grid.cell_area if want_hull else np.full(len(sa), np.nan)
    meta = {
        "engine": "fibred",
        "construction": construction,
        "k": p.k,
        "eps": eps,
        "delta": p.delta,
        "base": [base.umin, base.umax, base.vmin, base.vmax],
        "grid_res": grid_res,
        "cell": grid.cell,
        "density": density,
        "dilation_spacings": dilation,
        "stamp_radius": radius,
        "in_place": bool(in_place),
        "n_sources": int(len(U)),
        "n_records": int(len(sweep.rec_a)),
    }
    report = SectionReport(h, grid.cell_area, sa, sb, so * grid.cell_area, hull, column_x, 0.0, meta)
    return SweepResult(report, sweep)


# ---------------------------------------------------------------- sigma report


@dataclass
class SigmaReport:
    construction: str
    p: ScaleParams
    outer: SectionReport
    hull: Optional[SectionReport]
    energy: float
    lipschitz: Optional[float] = None
    meta: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict, repr=False)

    @property
    def sup_outer(self) -> float:
        return self.outer.sup_outer

    @property
    def sup_hull(self) -> float:
        return self.hull.sup_hull if self.hull is not None else 0.0

    @property
    def sigma_upper(self) -> float:
        return self.sup_outer + self.energy

    @property
    def sigma_hat_upper(self) -> float:
        return self.sup_hull + self.energy

    def to_dict(self, include_slabs: bool = True) -> dict:
        eps = self.p.eps
        fam = region_family(self.p)
        return _jsonable({
            "schema": SCHEMA,
            "construction": self.construction,
            "k": self.p.k,
            "eps": eps,
            "delta": self.p.delta,
            "nu": self.p.nu,
            "sup_outer": self.sup_outer,
            "sup_hull": self.sup_hull if self.hull is not None else None,
            "energy": self.energy,
            "sigma_upper": self.sigma_upper,
            "sigma_hat_upper": self.sigma_hat_upper if self.hull is not None else None,
            "annulus_area": fam.annulus_union_area(),
            "annulus_area_claimed_bound": eps / self.p.k,
            "lipschitz_estimate": self.lipschitz,
            "meta": self.meta,
            "P_set": self.outer.to_dict(include_slabs),
            "Q_set": self.hull.to_dict(include_slabs) if self.hull is not None else None,
        })

    def to_json(self, include_slabs: bool = True) -> str:
        return json.dumps(self.to_dict(include_slabs), indent=2, sort_keys=True)


def map_for(construction: str, p: ScaleParams, spec: FlowSpec = DEFAULT_SPEC):
    if construction == "section3":
        return Section3Map(p, spec)
    if construction == "section4":
        return Section4Map(p, spec)
    raise ValueError(f"construction must be one of {CONSTRUCTIONS}, got {construction!r}")


def lipschitz_sample(construction: str, p: ScaleParams, n: int = 64, seed: int = 0,
                     spec: FlowSpec = DEFAULT_SPEC) -> float:
    """Largest spectral norm of the map's derivative over random points of the P set."""
    rng = np.random.default_rng(seed)
    base = base_rect(construction, "P", p)
    hi_x = default_slab(p) if construction == "section3" else p.eps
    Z = rng.uniform([base.umin, base.vmin, 0.0, 0.0], [base.umax, base.vmax, hi_x, 1.0], size=(n, 4))
    J = map_for(construction, p, spec).jacobian(Z)
    return float(np.linalg.norm(J, 2, axis=(1, 2)).max())


def sigma_report(construction: str, k: int, *, grid_res: int = 1024, density: float = 1.0,
                 slab_h: Optional[float] = None, dilation: float = 0.75, x_samples: int = 4,
                 energy_samples: int = 32, lipschitz_points: int = 0, seed: int = 0,
                 spec: FlowSpec = DEFAULT_SPEC) -> SigmaReport:
    """Section measures of the P set (outer) and Q set (hull) plus the energy term.

    The energy is the sampled norm of F for ``section4`` (every block
    Hamiltonian has the same range) and 0 for ``section3``, where no energy
    bound is claimed.
    """
    p = derive_scales(k)
    common = dict(grid_res=grid_res, density=density, slab_h=slab_h, dilation=dilation,
                  x_samples=x_samples, spec=spec)
    sweeps = {"P": section_sweep(construction, p, base_rect(construction, "P", p),
                                 want_hull=False, **common)}
    outer = sweeps["P"].report
    qbase = base_rect(construction, "Q", p)
    hull = None
    if qbase is not None:
        sweeps["Q"] = section_sweep(construction, p, qbase, want_hull=True, **common)
        hull = sweeps["Q"].report
    energy = energy_norm(build_F(p), n=energy_samples) if construction == "section4" else 0.0
    outer.energy = energy
    if hull is not None:
        hull.energy = energy
    lip = lipschitz_sample(construction, p, lipschitz_points, seed, spec) if lipschitz_points else None
    meta = {"energy_samples_per_axis": energy_samples, "seed": seed,
            "rel_tol": spec.rel_tol, "abs_tol": spec.abs_tol}
    if lip is not None:
        meta["dilation_from_lipschitz"] = 1.5 * lip * outer.meta["cell"] / density
    return SigmaReport(construction, p, outer, hull, float(energy), lip, meta, sweeps)
