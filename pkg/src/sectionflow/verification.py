"""Named property checks of the two constructions, used by ``sectionflow verify``.

Every check returns a :class:`CheckResult` with a status of ``pass``, ``fail``
or ``skip``.  Checks are deterministic given the seed.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .flow import (
    DEFAULT_SPEC,
    ConjugatedBlockMap,
    FlowSpec,
    Section3Map,
    Section4Map,
    reduced_trajectory,
    t_star,
    tangent_symplecticity_defect,
)
from .geometry import Rect2, ScaleParams, derive_scales, region_family
from .hamiltonians import (
    build_F,
    energy_norm,
    g_coefficient,
    ramp_cutoff,
    reduced_params,
    standard_cutoffs,
)
from .sections import sigma_report


@dataclass
class CheckResult:
    name: str
    status: str
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
            "extra": self.extra,
        }


@dataclass
class VerifyConfig:
    construction: str
    k: int
    seed: int = 0
    grid_res: int = 1024
    density: float = 1.0
    slab_h: Optional[float] = None
    spec: FlowSpec = DEFAULT_SPEC


def _result(name, ok, value=None, threshold=None, detail="", **extra) -> CheckResult:
    return CheckResult(name, "pass" if ok else "fail", None if value is None else float(value),
                       None if threshold is None else float(threshold), detail, extra=extra)


def _skip(name, why) -> CheckResult:
    return CheckResult(name, "skip", detail=why)


def _uniform(rng, rect: Rect2, n: int):
    return rng.uniform(rect.umin, rect.umax, n), rng.uniform(rect.vmin, rect.vmax, n)


def _annulus_points(rng, outer: Rect2, inner: Rect2, n: int):
    """Uniform points of ``outer`` outside the open ``inner``, by rejection."""
    us, vs = [], []
    got = 0
    while got < n:
        u, v = _uniform(rng, outer, 4 * n)
        keep = ~inner.contains_open(u, v)
        us.append(u[keep])
        vs.append(v[keep])
        got += int(keep.sum())
    return np.concatenate(us)[:n], np.concatenate(vs)[:n]


def _grid2(rect: Rect2, n: int):
    u = rect.umin + (np.arange(n) + 0.5) * (rect.umax - rect.umin) / n
    v = rect.vmin + (np.arange(n) + 0.5) * (rect.vmax - rect.vmin) / n
    U, V = np.meshgrid(u, v)
    return U.ravel(), V.ravel()


def _map(cfg: VerifyConfig, p: ScaleParams):
    return Section3Map(p, cfg.spec) if cfg.construction == "section3" else Section4Map(p, cfg.spec)


# ---------------------------------------------------------------- shared checks


def check_cutoffs(cfg: VerifyConfig, p: ScaleParams, rng) -> CheckResult:
    """Plateaus, zero sets, range, monotone ramps and derivative consistency."""
    cut = standard_cutoffs(p)
    problems = []
    worst = 0.0
    for name in ("f1", "f2", "f3", "g1", "g2", "g3"):
        c = getattr(cut, name)
        t = np.linspace(c.t0 - 0.1, c.t3 + 0.1, 4001)
        val, der = c.evaluate(t, with_deriv=True)
        if np.any(val[(t >= c.t1) & (t <= c.t2)] != 1.0):
            problems.append(f"{name} plateau")
        if np.any(val[(t <= c.t0) | (t >= c.t3)] != 0.0):
            problems.append(f"{name} zero set")
        if np.any((val < 0) | (val > 1)):
            problems.append(f"{name} range")
        up = (t >= c.t0) & (t <= c.t1)
        down = (t >= c.t2) & (t <= c.t3)
        if np.any(np.diff(val[up]) < 0) or np.any(np.diff(val[down]) > 0):
            problems.append(f"{name} monotone")
        worst = max(worst, _fd_error(c, rng, c.t0, c.t3))
    for i in range(1, p.k + 1):
        g4 = ramp_cutoff(p, i)
        yc = g4.y_check
        t = np.linspace(yc - 0.1, yc + p.delta + 0.1, 4001)
        val = g4.evaluate(t)
        if np.any(val[t <= yc] != 0.0) or np.any(val[t >= yc + p.delta] != 1.0):
            problems.append(f"g4[{i}] zero/one sets")
        if np.any(np.diff(val) < 0):
            problems.append(f"g4[{i}] monotone")
        a, b = g4.linear_segment
        tl = np.linspace(a, b, 101)
        if np.max(np.abs(g4.evaluate(tl) - (tl - yc) / p.delta)) > 1e-12:
            problems.append(f"g4[{i}] linear segment")
        worst = max(worst, _fd_error(g4, rng, yc, yc + p.delta))
    ok = not problems and worst < 1e-5
    return _result("cutoffs", ok, worst, 1e-5, "; ".join(problems) or "derivative vs central differences")


def _fd_error(c, rng, lo, hi) -> float:
    t = rng.uniform(lo, hi, 400)
    hstep = 1e-7 * (hi - lo)
    fd = (c.evaluate(t + hstep) - c.evaluate(t - hstep)) / (2 * hstep)
    der = c.deriv(t)
    scale = np.maximum(np.abs(der), 1.0 / (hi - lo))
    return float(np.max(np.abs(fd - der) / scale))


def check_symplectic(cfg: VerifyConfig, p: ScaleParams, rng) -> CheckResult:
    """``max |J^T Omega J - Omega|`` at 100 random support points, J from the variational flow."""
    fam = region_family(p)
    n = 100
    if cfg.construction == "section3":
        u, v = _uniform(rng, fam.P_prime, n)
        Z = np.stack([u, v, rng.uniform(-1, 1, n), rng.uniform(0, 1, n)], axis=1)
    else:
        i = rng.integers(1, p.k + 1, n)
        j = rng.integers(-1, 2, n)
        u = (i - 1) * p.eps + rng.uniform(p.nu, p.eps - p.nu, n)
        v = rng.uniform(p.nu, 1 - p.nu, n)
        x = 4 * (i - 1) * p.delta + j * p.eps + rng.uniform(0, p.eps, n)
        Z = np.stack([u, v, x, rng.uniform(0, 1, n)], axis=1)
    defect = tangent_symplecticity_defect(_map(cfg, p), Z)
    worst = float(defect.max())
    return _result("symplectic", worst < 1e-4, worst, 1e-4, "tangent-flow derivative")


def check_sections(cfg: VerifyConfig, p: ScaleParams, rng) -> CheckResult:
    """Sup of section measures over slabs against the corrected bounds (5% slack)."""
    rep = sigma_report(cfg.construction, p.k, grid_res=cfg.grid_res, density=cfg.density,
                       slab_h=cfg.slab_h, seed=cfg.seed, spec=cfg.spec)
    eps = p.eps
    slack = 1.05
    bound = 3 * eps if cfg.construction == "section3" else 4 * eps
    fails = []
    if rep.sup_outer > slack * bound:
        fails.append(f"sup_outer {rep.sup_outer:.6g} > {slack * bound:.6g}")
    if rep.hull is not None and rep.sup_hull > slack * bound:
        fails.append(f"sup_hull {rep.sup_hull:.6g} > {slack * bound:.6g}")
    if cfg.construction == "section4":
        if rep.energy > 2 * eps:
            fails.append(f"energy {rep.energy:.6g} > {2 * eps:.6g}")
        if rep.sigma_upper > slack * 6 * eps:
            fails.append(f"sigma_upper {rep.sigma_upper:.6g} > {slack * 6 * eps:.6g}")
    return _result(
        "sections", not fails, rep.sup_outer, slack * bound, "; ".join(fails) or "within bounds",
        sup_outer=rep.sup_outer, sup_hull=rep.sup_hull if rep.hull is not None else None,
        energy=rep.energy, sigma_upper=rep.sigma_upper,
        sup_outer_over_eps=rep.sup_outer / eps,
        sup_hull_over_eps=(rep.sup_hull / eps) if rep.hull is not None else None,
        argmax_outer=rep.outer.argmax_outer,
        argmax_hull=rep.hull.argmax_hull if rep.hull is not None else None,
    )


# ---------------------------------------------------------------- block-shear construction


def _fixed_count(Z, img) -> int:
    return int(np.sum(np.any(img != Z, axis=1)))


def s3_support(cfg, p, rng) -> CheckResult:
    """Points outside ``P' x R^2`` are returned bit-identical."""
    fam = region_family(p)
    n = 200
    big = Rect2(-0.5, math.pi + 0.5, -0.5, 1.5)
    u, v = _annulus_points(rng, big, fam.P_prime, n)
    Z = np.stack([u, v, rng.uniform(-2, 2, n), rng.uniform(-1, 3, n)], axis=1)
    moved = _fixed_count(Z, _map(cfg, p)(Z))
    return _result("P1", moved == 0, moved, 0, "points moved outside P' x R^2")


def s3_fixes_annuli(cfg, p, rng) -> CheckResult:
    """``A_i x R^2`` is fixed bit-for-bit."""
    fam = region_family(p)
    n = 200
    blk = rng.integers(0, p.k, n)
    u = np.empty(n)
    v = np.empty(n)
    for i in range(p.k):
        rows = np.flatnonzero(blk == i)
        u[rows], v[rows] = _annulus_points(rng, fam.R[i], fam.R1[i], len(rows))
    Z = np.stack([u, v, rng.uniform(-2, 2, n), rng.uniform(-1, 3, n)], axis=1)
    moved = _fixed_count(Z, _map(cfg, p)(Z))
    return _result("P2", moved == 0, moved, 0, "points of A x R^2 moved")


def s3_embeds_inner_annuli(cfg, p, rng) -> CheckResult:
    """Images of ``A'_i x R^2`` keep ``(u, v)`` in ``A'_i`` and x unchanged."""
    fam = region_family(p)
    n = 200
    bad = 0
    m = _map(cfg, p)
    for i in range(p.k):
        u, v = _annulus_points(rng, fam.R1[i], fam.R2[i], n // p.k + 1)
        Z = np.stack([u, v, rng.uniform(-1, 1, len(u)), rng.uniform(0, 1, len(u))], axis=1)
        img = m(Z)
        tol = 1e-9
        inside = fam.R1[i].inset(-tol).contains(img[:, 0], img[:, 1])
        inside &= ~fam.R2[i].inset(tol).contains_open(img[:, 0], img[:, 1])
        bad += int(np.sum(~inside | (img[:, 2] != Z[:, 2])))
    return _result("P3", bad == 0, bad, 0, "images of A' x R^2 leaving A' x R^2")


def s3_translation(cfg, p, rng) -> CheckResult:
    """``R''_i x R^2`` is translated by ``i (1 + eps) 1_y``: 50 stratified points per block."""
    fam = region_family(p)
    m = _map(cfg, p)
    worst = 0.0
    for i in range(1, p.k + 1):
        u, v = _grid2(fam.R2[i - 1], 5)
        u = np.repeat(u, 2)
        v = np.repeat(v, 2)
        y = np.tile([0.25, 0.75], 25)
        x = np.full(50, rng.uniform(-1, 1))
        Z = np.stack([u, v, x, y], axis=1)
        img = m(Z)
        want = Z.copy()
        want[:, 3] += i * (1 + p.eps)
        worst = max(worst, float(np.max(np.abs(img - want))))
    return _result("P4", worst <= 1e-6, worst, 1e-6, "max deviation from i(1+eps) 1_y")


def s3_x_preserved(cfg, p, rng) -> CheckResult:
    """The map does not change x."""
    fam = region_family(p)
    n = 200
    u, v = _uniform(rng, fam.P, n)
    Z = np.stack([u, v, rng.uniform(-2, 2, n), rng.uniform(0, 1, n)], axis=1)
    moved = int(np.sum(_map(cfg, p)(Z)[:, 2] != Z[:, 2]))
    return _result("x_preserved", moved == 0, moved, 0, "images with changed x")


# ---------------------------------------------------------------- conjugated construction


def _cell_points(rng, p, n, urect_local: Rect2, x_lo, x_hi, y_lo=0.0, y_hi=1.0):
    """Random points in ``rect x [x_lo, x_hi] x [y_lo, y_hi]`` of random cells ``(i, j)``."""
    i = rng.integers(1, p.k + 1, n)
    j = rng.integers(-1, 2, n)
    u, v = _uniform(rng, urect_local, n)
    x = rng.uniform(x_lo, x_hi, n)
    Z = np.stack([u + (i - 1) * p.eps, v, x + 4 * (i - 1) * p.delta + j * p.eps,
                  rng.uniform(y_lo, y_hi, n)], axis=1)
    return Z, i, j


def _half_open(rng, lo, hi, n):
    """Uniform in ``[lo, hi)`` without hitting ``hi``."""
    return np.minimum(rng.uniform(lo, hi, n), np.nextafter(hi, lo))


def s4_support(cfg, p, rng) -> CheckResult:
    """Each conjugated block map fixes points outside ``R^nu x I x R``."""
    fam = region_family(p)
    n = 100
    bad = 0
    big = Rect2(-0.2, p.eps + 0.2, -0.2, 1.2)
    for i in range(1, p.k + 1):
        m = ConjugatedBlockMap(p, i, cfg.spec)
        u, v = _annulus_points(rng, big, fam.R_nu[0], n)
        Z1 = np.stack([u, v, rng.uniform(-0.5, p.eps + 0.5, n), rng.uniform(-1, 4, n)], axis=1)
        u, v = _uniform(rng, fam.R_nu[0], n)
        x = np.where(rng.random(n) < 0.5, rng.uniform(-0.5, 0.0, n), rng.uniform(p.eps, p.eps + 0.5, n))
        Z2 = np.stack([u, v, x, rng.uniform(-1, 4, n)], axis=1)
        Z = np.concatenate([Z1, Z2])
        bad += _fixed_count(Z, m(Z))
    return _result("P1", bad == 0, bad, 0, "points moved outside R^nu x I x R")


def s4_fixes_annuli(cfg, p, rng) -> CheckResult:
    """``A x I x [0, 1]`` is fixed bit-for-bit."""
    fam = region_family(p)
    n = 200
    u, v = _annulus_points(rng, fam.R[0], fam.R1[0], n)
    Z, i, j = _cell_points(rng, p, n, fam.R[0], 0.0, p.eps)
    Z[:, 0] = u + (i - 1) * p.eps
    Z[:, 1] = v
    Z[:, 2] = _half_open(rng, 0.0, p.eps, n) + 4 * (i - 1) * p.delta + j * p.eps
    moved = _fixed_count(Z, _map(cfg, p)(Z))
    return _result("P2", moved == 0, moved, 0, "points of A x I x [0,1] moved")


def s4_embeds_inner_annuli(cfg, p, rng) -> CheckResult:
    """Images of ``A' x I x [0, 1]`` stay in ``A' x I x R``."""
    fam = region_family(p)
    n = 200
    u, v = _annulus_points(rng, fam.R1[0], fam.R2[0], n)
    Z, i, j = _cell_points(rng, p, n, fam.R1[0], 0.0, p.eps)
    Z[:, 0] = u + (i - 1) * p.eps
    Z[:, 1] = v
    shift = 4 * (i - 1) * p.delta + j * p.eps
    Z[:, 2] = _half_open(rng, 0.0, p.eps, n) + shift
    img = _map(cfg, p)(Z)
    lu = img[:, 0] - (i - 1) * p.eps
    tol = 1e-9
    ok = fam.R1[0].inset(-tol).contains(lu, img[:, 1])
    ok &= ~fam.R2[0].inset(tol).contains_open(lu, img[:, 1])
    lx = img[:, 2] - shift
    ok &= (lx >= -tol) & (lx <= p.eps + tol)
    bad = int(np.sum(~ok))
    return _result("P3", bad == 0, bad, 0, "images of A' x I x [0,1] leaving A' x I x R")


def s4_fixes_gaps(cfg, p, rng) -> CheckResult:
    """``R'' x J x [0, 1]`` is fixed bit-for-bit."""
    fam = region_family(p)
    n = 200
    Z, i, j = _cell_points(rng, p, n, fam.R2[0], 0.0, p.delta)
    flip = rng.random(n) < 0.5
    Z[flip, 2] += p.eps - p.delta
    Z[:, 2] = np.minimum(Z[:, 2], np.nextafter(4 * (i - 1) * p.delta + (j + 1) * p.eps, -np.inf))
    moved = _fixed_count(Z, _map(cfg, p)(Z))
    return _result("P4", moved == 0, moved, 0, "points of R'' x J x [0,1] moved")


def s4_ramp_band(cfg, p, rng) -> CheckResult:
    """Images of ``R'' x J' x [0, 1]`` land in the allowed x-gaps or y-bands."""
    if any(g_coefficient(p, i) <= 0 for i in range(1, p.k + 1)):
        return _skip("P5", "needs 2i - 1 - eps > 0 for every block, which holds for k >= 4")
    fam = region_family(p)
    n = 300
    Z, i, j = _cell_points(rng, p, n, fam.R2[0], p.delta, 2 * p.delta)
    flip = rng.random(n) < 0.5
    Z[flip, 2] += p.eps - 3 * p.delta
    img = _map(cfg, p)(Z)
    shift = 4 * (i - 1) * p.delta + j * p.eps
    lu = img[:, 0] - (i - 1) * p.eps
    lx = img[:, 2] - shift
    y = img[:, 3]
    tol = 1e-7
    in_r2 = fam.R2[0].inset(-tol).contains(lu, img[:, 1])
    in_gap = ((lx >= -tol) & (lx <= 2 * p.delta + tol)) | (
        (lx >= p.eps - 2 * p.delta - tol) & (lx <= p.eps + tol))
    yc = np.array(fam.y_check)[i - 1]
    yh = np.array(fam.y_hat)[i - 1]
    in_band = (lx >= -tol) & (lx <= p.eps + tol) & (
        ((y >= yc - tol) & (y <= yc + p.delta + tol)) | ((y >= yh - p.eps - tol) & (y <= yh + tol)))
    bad = int(np.sum(~(in_r2 & (in_gap | in_band))))
    return _result("P5", bad == 0, bad, 0, "images outside the allowed gap and band union")


def s4_translation(cfg, p, rng) -> CheckResult:
    """``R'' x I'' x [0, 1]`` is translated by ``2i 1_y`` (centres plus 20 stratified points)."""
    fam = region_family(p)
    m = _map(cfg, p)
    worst = 0.0
    for i in range(1, p.k + 1):
        r2 = fam.R2[i - 1]
        for j in (0, 1):
            xlo = fam.I2_ij(i, j).lo
            xhi = fam.I2_ij(i, j).hi
            cu, cv = r2.center
            pts = [(cu, cv, 0.5 * (xlo + xhi), 0.5)]
            u, v = _grid2(r2, 2)
            xs = xlo + (np.arange(5) + 0.5) * (xhi - xlo) / 5
            for q in range(20):
                pts.append((u[q % 4], v[q % 4], xs[q % 5], (q + 0.5) / 20))
            Z = np.array(pts)
            img = m(Z)
            want = Z.copy()
            want[:, 3] += 2 * i
            worst = max(worst, float(np.max(np.abs(img - want))))
    return _result("P6", worst <= 1e-5, worst, 1e-5, "max deviation from 2i 1_y")


def s4_energy(cfg, p, rng) -> CheckResult:
    """Sampled norm of F (shared by every block Hamiltonian) against ``(1+eps)(eps-delta) <= 2 eps``."""
    F = build_F(p)
    e = energy_norm(F, n=32)
    bound = (1 + p.eps) * (p.eps - p.delta)
    ok = e <= bound * (1 + 1e-12) and e <= 2 * p.eps
    # (1+eps)(eps-delta) itself exceeds 2 eps at k = 2; the sampled norm does not
    return _result("P7", ok, e, min(bound, 2 * p.eps), "sampled sup F - inf F on a 32^3 grid",
                   two_eps=2 * p.eps, analytic_bound=bound,
                   analytic_bound_within_two_eps=bool(bound <= 2 * p.eps))


def s4_trajectory(cfg, p, rng) -> CheckResult:
    """Reduced curve from ``(eps - delta, y_check + nu)`` reaches ``(delta, y_check + delta - nu)`` at t*."""
    fam = region_family(p)
    i = 1
    ts = t_star(p, i)
    yc = fam.y_check[i - 1]
    span = (min(0.0, ts) - 0.01, max(1.0, ts))
    tr = reduced_trajectory(p, i, p.eps - p.delta, yc + p.nu, cfg.spec, t_span=span,
                            extra_times=[ts])
    got = tr.at(ts)
    err = float(np.max(np.abs(got - np.array([p.delta, yc + p.delta - p.nu]))))
    return _result("trajectory", err <= 1e-3, err, 1e-3, f"t* = {ts:.9g}", t_star=ts)


def s4_monotone(cfg, p, rng) -> CheckResult:
    """Along reduced curves from ``I x [0, 1]``, x never increases and y never decreases."""
    if any(g_coefficient(p, i) <= 0 for i in range(1, p.k + 1)):
        return _skip("monotone", "needs 2i - 1 - eps > 0 for every block, which holds for k >= 4")
    worst = 0.0
    for i in range(1, p.k + 1):
        params = reduced_params(p, i)
        for x0, y0 in zip(rng.uniform(0, p.eps, 8), rng.uniform(0, 1, 8)):
            tr = reduced_trajectory(p, i, x0, y0, cfg.spec, n_samples=101)
            d = kernels.field(params, np.ascontiguousarray(tr.points))
            worst = max(worst, float(d[:, 0].max()), float(-d[:, 1].min()))
    return _result("monotone", worst <= 1e-8, worst, 1e-8, "max of dx/dt and -dy/dt along curves")


SECTION3_CHECKS: dict[str, Callable] = {
    "cutoffs": check_cutoffs,
    "P1": s3_support,
    "P2": s3_fixes_annuli,
    "P3": s3_embeds_inner_annuli,
    "P4": s3_translation,
    "x_preserved": s3_x_preserved,
    "symplectic": check_symplectic,
    "sections": check_sections,
}

SECTION4_CHECKS: dict[str, Callable] = {
    "cutoffs": check_cutoffs,
    "P1": s4_support,
    "P2": s4_fixes_annuli,
    "P3": s4_embeds_inner_annuli,
    "P4": s4_fixes_gaps,
    "P5": s4_ramp_band,
    "P6": s4_translation,
    "P7": s4_energy,
    "trajectory": s4_trajectory,
    "monotone": s4_monotone,
    "symplectic": check_symplectic,
    "sections": check_sections,
}


def available_checks(construction: str) -> dict[str, Callable]:
    if construction == "section3":
        return SECTION3_CHECKS
    if construction == "section4":
        return SECTION4_CHECKS
    raise ValueError(f"unknown construction {construction!r}")


def run_checks(cfg: VerifyConfig, names=None) -> list[CheckResult]:
    """Run the named checks (all for the construction when ``names`` is None), in order."""
    p = derive_scales(cfg.k)
    table = available_checks(cfg.construction)
    names = list(table) if names is None else list(names)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise KeyError(f"unknown checks for {cfg.construction}: {', '.join(unknown)}")
    out = []
    for name in names:
        rng = np.random.default_rng([cfg.seed, zlib.crc32(name.encode()), cfg.k])
        t0 = time.perf_counter()
        res = table[name](cfg, p, rng)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
