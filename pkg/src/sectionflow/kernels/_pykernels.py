"""Pure numpy implementations of the compiled kernels.

Same signatures and semantics as the Cython module.  Integration is
vectorised across points, each point carrying its own step size.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..cutoffs import transition, transition2
from .params import (
    F,
    G,
    HARMONIC,
    LEVEL,
    P_C1,
    P_C2,
    P_C3,
    P_COEF,
    P_EPS,
    P_K,
    P_KIND,
    P_RAMP,
    RED,
    SEC3,
    base_dimension,
    state_dimension,
)

_MACH_EPS = np.finfo(float).eps


def _plateau(c, t):
    f = np.zeros_like(t)
    df = np.zeros_like(t)
    f[(t >= c[1]) & (t <= c[2])] = 1.0
    up = (t > c[0]) & (t < c[1])
    if up.any():
        w = c[1] - c[0]
        h, dh = transition((t[up] - c[0]) / w)
        f[up] = h
        df[up] = dh / w
    down = (t > c[2]) & (t < c[3])
    if down.any():
        w = c[3] - c[2]
        h, dh = transition((c[3] - t[down]) / w)
        f[down] = h
        df[down] = -dh / w
    return f, df


def _ramp(r, t):
    yc, d, nu = r
    f = np.where(t >= yc + d, 1.0, 0.0)
    df = np.zeros_like(t)
    lin = (t >= yc + nu) & (t <= yc + d - nu)
    f[lin] = (t[lin] - yc) / d
    df[lin] = 1.0 / d
    lo = (t > yc) & (t < yc + nu)
    if lo.any():
        s = (t[lo] - yc) / nu
        h, dh = transition(s)
        f[lo] = (nu / d) * s * h
        df[lo] = (h + s * dh) / d
    hi = (t > yc + d - nu) & (t < yc + d)
    if hi.any():
        s = (yc + d - t[hi]) / nu
        h, dh = transition(s)
        f[hi] = 1.0 - (nu / d) * s * h
        df[hi] = (h + s * dh) / d
    return f, df


def _plateau2(c, t):
    f, df = _plateau(c, t)
    ddf = np.zeros_like(t)
    for lo, hi, a, b in ((c[0], c[1], 1.0, -c[0]), (c[2], c[3], -1.0, c[3])):
        m = (t > lo) & (t < hi)
        if m.any():
            w = hi - lo
            _, _, ddh = transition2((a * t[m] + b) / w)
            ddf[m] = ddh / (w * w)
    return f, df, ddf


def _ramp2(r, t):
    yc, d, nu = r
    f, df = _ramp(r, t)
    ddf = np.zeros_like(t)
    for lo, hi, sign in ((yc, yc + nu, 1.0), (yc + d - nu, yc + d, -1.0)):
        m = (t > lo) & (t < hi)
        if m.any():
            s = (t[m] - yc) / nu if sign > 0 else (yc + d - t[m]) / nu
            _, dh, ddh = transition2(s)
            ddf[m] = sign * (2.0 * dh + s * ddh) / (d * nu)
    return f, df, ddf


def _dim(params) -> int:
    return state_dimension(params)


def field(params, Z):
    params = np.asarray(params, dtype=float)
    Z = np.asarray(Z, dtype=float)
    d = _dim(params)
    if Z.ndim != 2 or Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[-1]} does not match field dimension {d}")
    b = base_dimension(params)
    if d == b:
        return _base_field(params, Z)
    out = np.empty_like(Z)
    out[:, :b] = _base_field(params, Z[:, :b])
    D = _jacobian(params, Z[:, :b])
    M = Z[:, b:].reshape(-1, b, b)
    out[:, b:] = np.matmul(D, M).reshape(len(Z), b * b)
    return out


def jacobian_field(params, Z):
    """Analytic Jacobian of the field at each row of Z, shape (N, d, d)."""
    params = np.asarray(params, dtype=float)
    Z = np.asarray(Z, dtype=float)
    d = base_dimension(params)
    if Z.ndim != 2 or Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[-1]} does not match field dimension {d}")
    return _jacobian(params, Z)


def _jacobian(params, Z):
    kind = int(params[P_KIND])
    d = base_dimension(params)
    D = np.zeros((len(Z), d, d))
    c1 = params[P_C1 : P_C1 + 4]
    c2 = params[P_C2 : P_C2 + 4]
    c3 = params[P_C3 : P_C3 + 4]
    ramp = params[P_RAMP : P_RAMP + 3]
    w = params[P_COEF]
    if kind == LEVEL:
        a, da, dda = _plateau2(c1, Z[:, 0])
        b, db, ddb = _plateau2(c2, Z[:, 1])
        D[:, 0, 0] = -da * db
        D[:, 0, 1] = -a * ddb
        D[:, 1, 0] = dda * b
        D[:, 1, 1] = da * db
    elif kind == SEC3:
        eps, k = params[P_EPS], int(params[P_K])
        i = np.floor(Z[:, 0] / eps).astype(np.int64) + 1
        ok = (i >= 1) & (i <= k)
        a, da, dda = _plateau2(c1, Z[:, 0] - (i - 1) * eps)
        b, db, ddb = _plateau2(c2, Z[:, 1])
        wi = np.where(ok, i * w, 0.0)
        x = Z[:, 2]
        D[:, 0, 0] = -wi * da * db * x
        D[:, 0, 1] = -wi * a * ddb * x
        D[:, 0, 2] = -wi * a * db
        D[:, 1, 0] = wi * dda * b * x
        D[:, 1, 1] = wi * da * db * x
        D[:, 1, 2] = wi * da * b
        D[:, 3, 0] = wi * da * b
        D[:, 3, 1] = wi * a * db
    elif kind in (F, G):
        a, da, dda = _plateau2(c1, Z[:, 0])
        b, db, ddb = _plateau2(c2, Z[:, 1])
        c, dc, ddc = _plateau2(c3, Z[:, 2])
        if kind == G:
            g, dg, ddg = _ramp2(ramp, Z[:, 3])
        else:
            g, dg, ddg = np.ones(len(Z)), np.zeros(len(Z)), np.zeros(len(Z))
        x = Z[:, 2]
        C0, C1, C2 = c * x, dc * x + c, ddc * x + 2.0 * dc
        D[:, 0, 0] = -w * da * db * C0 * g
        D[:, 0, 1] = -w * a * ddb * C0 * g
        D[:, 0, 2] = -w * a * db * C1 * g
        D[:, 0, 3] = -w * a * db * C0 * dg
        D[:, 1, 0] = w * dda * b * C0 * g
        D[:, 1, 1] = w * da * db * C0 * g
        D[:, 1, 2] = w * da * b * C1 * g
        D[:, 1, 3] = w * da * b * C0 * dg
        D[:, 2, 0] = -w * da * b * C0 * dg
        D[:, 2, 1] = -w * a * db * C0 * dg
        D[:, 2, 2] = -w * a * b * C1 * dg
        D[:, 2, 3] = -w * a * b * C0 * ddg
        D[:, 3, 0] = w * da * b * C1 * g
        D[:, 3, 1] = w * a * db * C1 * g
        D[:, 3, 2] = w * a * b * C2 * g
        D[:, 3, 3] = w * a * b * C1 * dg
    elif kind == RED:
        c, dc, ddc = _plateau2(c3, Z[:, 0])
        g, dg, ddg = _ramp2(ramp, Z[:, 1])
        x = Z[:, 0]
        C0, C1, C2 = c * x, dc * x + c, ddc * x + 2.0 * dc
        D[:, 0, 0] = -w * C1 * dg
        D[:, 0, 1] = -w * C0 * ddg
        D[:, 1, 0] = w * C2 * g
        D[:, 1, 1] = w * C1 * dg
    elif kind == HARMONIC:
        D[:, 0, 1] = w
        D[:, 1, 0] = -w
        D[:, 2, 3] = w
        D[:, 3, 2] = -w
    return D


def _base_field(params, Z):
    kind = int(params[P_KIND])
    out = np.zeros_like(Z)
    c1 = params[P_C1 : P_C1 + 4]
    c2 = params[P_C2 : P_C2 + 4]
    c3 = params[P_C3 : P_C3 + 4]
    ramp = params[P_RAMP : P_RAMP + 3]
    w = params[P_COEF]
    if kind == LEVEL:
        a, da = _plateau(c1, Z[:, 0])
        b, db = _plateau(c2, Z[:, 1])
        out[:, 0] = -a * db
        out[:, 1] = da * b
    elif kind == SEC3:
        eps, k = params[P_EPS], int(params[P_K])
        i = np.floor(Z[:, 0] / eps).astype(np.int64) + 1
        ok = (i >= 1) & (i <= k)
        ul = Z[:, 0] - (i - 1) * eps
        a, da = _plateau(c1, ul)
        b, db = _plateau(c2, Z[:, 1])
        wi = np.where(ok, i * w, 0.0)
        x = Z[:, 2]
        out[:, 0] = -wi * a * db * x
        out[:, 1] = wi * da * b * x
        out[:, 3] = wi * a * b
    elif kind == F:
        a, da = _plateau(c1, Z[:, 0])
        b, db = _plateau(c2, Z[:, 1])
        c, dc = _plateau(c3, Z[:, 2])
        x = Z[:, 2]
        out[:, 0] = -w * a * db * c * x
        out[:, 1] = w * da * b * c * x
        out[:, 3] = w * a * b * (dc * x + c)
    elif kind == G:
        a, da = _plateau(c1, Z[:, 0])
        b, db = _plateau(c2, Z[:, 1])
        c, dc = _plateau(c3, Z[:, 2])
        g, dg = _ramp(ramp, Z[:, 3])
        x = Z[:, 2]
        out[:, 0] = -w * a * db * c * g * x
        out[:, 1] = w * da * b * c * g * x
        out[:, 2] = -w * a * b * c * dg * x
        out[:, 3] = w * a * b * (dc * x + c) * g
    elif kind == RED:
        c, dc = _plateau(c3, Z[:, 0])
        g, dg = _ramp(ramp, Z[:, 1])
        x = Z[:, 0]
        out[:, 0] = -w * c * dg * x
        out[:, 1] = w * (dc * x + c) * g
    elif kind == HARMONIC:
        out[:, 0] = w * Z[:, 1]
        out[:, 1] = -w * Z[:, 0]
        out[:, 2] = w * Z[:, 3]
        out[:, 3] = -w * Z[:, 2]
    return out


_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _rms(v, z, rtol, atol):
    sc = atol + rtol * np.abs(z)
    return np.sqrt(np.mean((v / sc) ** 2, axis=1))


def _initial_step(params, z, f0, rtol, atol):
    d0 = _rms(z, z, rtol, atol)
    d1 = _rms(f0, z, rtol, atol)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    f1 = field(params, z + h0[:, None] * f0)
    d2 = _rms(f1 - f0, z, rtol, atol) / h0
    m = np.maximum(d1, d2)
    with np.errstate(divide="ignore"):
        h1 = np.where(m <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / m) ** 0.2)
    return np.minimum(100.0 * h0, h1)


def _solve(params, Z, times, t0, rtol, atol, hmax, maxsteps, group=None):
    params = np.asarray(params, dtype=float)
    z = np.array(Z, dtype=float, copy=True)
    N, d = z.shape
    T = times.shape[1]
    out = np.repeat(z[:, None, :], T, axis=1)
    status = np.zeros(N, dtype=np.int8)
    nsteps = np.zeros(N, dtype=np.int64)
    if N == 0 or T == 0:
        return out, status, nsteps
    t = np.full(N, float(t0))
    k1 = field(params, z)
    active = np.any(k1 != 0.0, axis=1)
    dirn = np.where(times[:, -1] >= t0, 1.0, -1.0)
    h = np.zeros(N)
    if active.any():
        h[active] = np.minimum(
            _initial_step(params, z[active], k1[active], rtol, atol), hmax
        )
    ti = np.zeros(N, dtype=np.int64)
    if group is not None:
        group = np.asarray(group, dtype=np.int64)
        n_groups = int(group.max()) + 1
        gh = np.full(n_groups, np.inf)
        np.minimum.at(gh, group[active], h[active])
        h[active] = gh[group[active]]

    def finish(rows, code):
        for r in rows:
            out[r, ti[r] :] = z[r]
        status[rows] = code
        active[rows] = False

    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        rem = (times[idx, ti[idx]] - t[idx]) * dirn[idx]
        reached = rem <= 0.0
        if reached.any():
            r = idx[reached]
            out[r, ti[r]] = z[r]
            ti[r] += 1
            active[r[ti[r] >= T]] = False
            continue
        over = nsteps[idx] >= maxsteps
        if over.any():
            finish(idx[over], 2)
            continue
        clipped = h[idx] >= rem
        hh = np.where(clipped, rem, h[idx])
        under = hh < 16.0 * _MACH_EPS * np.maximum(np.abs(t[idx]), 1e-300)
        if under.any():
            finish(idx[under], 1)
            continue

        zi = z[idx]
        hs = (hh * dirn[idx])[:, None]
        ks = [k1[idx]]
        for s in range(1, 6):
            acc = zi.copy()
            for j, a in enumerate(_A[s]):
                acc += hs * a * ks[j]
            ks.append(field(params, acc))
        yn = zi.copy()
        for j, b in enumerate(_B):
            if b:
                yn += hs * b * ks[j]
        k7 = field(params, yn)
        ks.append(k7)
        er = np.zeros_like(zi)
        for j, e in enumerate(_E):
            if e:
                er += hs * e * ks[j]
        sc = atol + rtol * np.maximum(np.abs(zi), np.abs(yn))
        err = np.sqrt(np.mean((er / sc) ** 2, axis=1))
        if group is not None:
            # rows of one group share every step so finite differences stay coherent
            ge = np.zeros(n_groups)
            np.maximum.at(ge, group[idx], err)
            err = ge[group[idx]]
        nsteps[idx] += 1

        ok = err <= 1.0
        with np.errstate(divide="ignore"):
            grow = np.where(err == 0.0, 5.0, np.clip(0.9 * err ** -0.2, 0.2, 5.0))
            shrink = np.maximum(0.2, 0.9 * err ** -0.2)
        acc_rows = idx[ok]
        hnew = hh[ok] * grow[ok]
        keep = clipped[ok] & (hnew < h[acc_rows])
        hnew[keep] = h[acc_rows][keep]
        t[acc_rows] = np.where(
            clipped[ok], times[acc_rows, ti[acc_rows]], t[acc_rows] + dirn[acc_rows] * hh[ok]
        )
        z[acc_rows] = yn[ok]
        k1[acc_rows] = k7[ok]
        h[acc_rows] = np.minimum(hnew, hmax)
        rej = idx[~ok]
        h[rej] = hh[~ok] * shrink[~ok]

    return out, status, nsteps


def integrate(params, Z, t0, t1, rtol, atol, max_step, max_steps, group=None):
    """Integrate rows of Z from t0 to t1.

    ``group`` (numpy backend only) assigns rows to lockstep groups: all rows of a
    group advance with one shared step sequence, driven by the worst error.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    d = _dim(params)
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    if t1 == t0:
        return Z.copy(), np.zeros(len(Z), np.int8), np.zeros(len(Z), np.int64)
    times = np.full((len(Z), 1), float(t1))
    out, status, nsteps = _solve(params, Z, times, t0, rtol, atol, max_step, max_steps, group)
    return out[:, 0, :], status, nsteps


def integrate_times(params, Z, times, t0, rtol, atol, max_step, max_steps):
    Z = np.ascontiguousarray(Z, dtype=float)
    d = _dim(params)
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    times = np.ascontiguousarray(times, dtype=float)
    if times.shape[0] != len(Z):
        raise ValueError("times must have one row per state")
    out, status, _ = _solve(params, Z, times, t0, rtol, atol, max_step, max_steps)
    return out, status


# ---------------------------------------------------------------- rasters


def _stamp_cells(px, py, nx, ny, radius):
    """Flat cell indices touched by each point (with repetition) and a ring-violation flag."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    if px.size == 0:
        return np.zeros(0, dtype=np.int64), False
    reach = int(np.ceil(radius)) + 1
    off = np.arange(-reach, reach + 1)
    ox, oy = np.meshgrid(off, off)
    ox = ox.ravel()
    oy = oy.ravel()
    ix0 = np.floor(px).astype(np.int64)
    iy0 = np.floor(py).astype(np.int64)
    ix = ix0[:, None] + ox[None, :]
    iy = iy0[:, None] + oy[None, :]
    dx = ix + 0.5 - px[:, None]
    dy = iy + 0.5 - py[:, None]
    keep = (dx * dx + dy * dy <= radius * radius) | ((ox == 0) & (oy == 0))[None, :]
    ix = ix[keep]
    iy = iy[keep]
    inside = (ix >= 1) & (iy >= 1) & (ix < nx - 1) & (iy < ny - 1)
    bad = not inside.all()
    return iy[inside] * nx + ix[inside], bad


def stamp_points(px, py, nx, ny, radius):
    cells, bad = _stamp_cells(px, py, nx, ny, radius)
    occ = np.zeros(nx * ny, dtype=np.uint8)
    occ[cells] = 1
    return occ.reshape(ny, nx), int(bad)


def _hull_count(occ2d):
    return int(np.count_nonzero(ndimage.binary_fill_holes(occ2d)))


def hull_cells(occ):
    occ = np.asarray(occ).astype(bool)
    n_occ = int(occ.sum())
    if n_occ == 0:
        return 0, 0, 0
    if occ[0].any() or occ[-1].any() or occ[:, 0].any() or occ[:, -1].any():
        return n_occ, -1, 1
    return n_occ, _hull_count(occ), 0


def sweep_slabs(rec_a, rec_bs, rec_be, rec_kind, rec_lo, rec_hi, pts_x, pts_y, grp_cells,
                nx, ny, radius, want_hull):
    rec_a = np.asarray(rec_a)
    rec_bs = np.asarray(rec_bs)
    rec_be = np.asarray(rec_be)
    out_a, out_b, out_o, out_h = [], [], [], []
    status = 0
    counts = np.zeros(nx * ny, dtype=np.int64)
    cache = {}

    def cells_of(r):
        if r not in cache:
            lo, hi = int(rec_lo[r]), int(rec_hi[r])
            if rec_kind[r] == 0:
                cache[r] = _stamp_cells(pts_x[lo:hi], pts_y[lo:hi], nx, ny, radius)
            else:
                cache[r] = (np.asarray(grp_cells[lo:hi], dtype=np.int64), False)
        return cache[r]

    for a in np.unique(rec_a):
        rows = np.flatnonzero(rec_a == a)
        starts = {}
        ends = {}
        for r in rows:
            starts.setdefault(int(rec_bs[r]), []).append(r)
            ends.setdefault(int(rec_be[r]), []).append(r)
        event_bs = sorted(starts)
        b = event_bs[0]
        active = 0
        next_start = 0
        while True:
            for r in starts.get(b, ()):
                cells, bad = cells_of(r)
                status |= int(bad)
                np.add.at(counts, cells, 1)
                active += 1
            if b in starts:
                next_start += 1
            occ2d = (counts > 0).reshape(ny, nx)
            n_occ = int(occ2d.sum())
            if n_occ:
                hull = 0
                if want_hull:
                    if occ2d[0].any() or occ2d[-1].any() or occ2d[:, 0].any() or occ2d[:, -1].any():
                        status |= 1
                        hull = -1
                    else:
                        hull = _hull_count(occ2d)
                out_a.append(int(a))
                out_b.append(b)
                out_o.append(n_occ)
                out_h.append(hull)
            for r in ends.get(b, ()):
                cells, _ = cells_of(r)
                np.add.at(counts, cells, -1)
                active -= 1
            if active == 0:
                cache.clear()
                if next_start < len(event_bs):
                    b = event_bs[next_start]
                    continue
                break
            b += 1
        if counts.any():
            status |= 2
            break
    as64 = lambda x: np.asarray(x, dtype=np.int64)
    return as64(out_a), as64(out_b), as64(out_o), as64(out_h), status


def integrate_grouped(params, Z, starts, t0, t1, rtol, atol, max_step, max_steps):
    """Lockstep integration of contiguous row groups ``Z[starts[g]:starts[g+1]]``."""
    starts = np.asarray(starts, dtype=np.int64)
    group = np.repeat(np.arange(len(starts) - 1), np.diff(starts))
    out, status, _ = integrate(params, Z, t0, t1, rtol, atol, max_step, max_steps, group=group)
    return out, status
