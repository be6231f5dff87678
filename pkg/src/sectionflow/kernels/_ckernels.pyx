# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: field evaluation, Dormand-Prince integration, raster sweep."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, floor, ceil, pow, fmin, fmax
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF EXP_CLIP = 700.0
DEF MACH_EPS = 2.220446049250313e-16

# parameter vector layout (mirrors params.py)
DEF P_KIND = 0
DEF P_K = 1
DEF P_EPS = 2
DEF P_COEF = 3
DEF P_C1 = 4
DEF P_C2 = 8
DEF P_C3 = 12
DEF P_RAMP = 16
DEF P_TANGENT = 19
DEF MAXD = 20

DEF K_ZERO = 0
DEF K_LEVEL = 1
DEF K_SEC3 = 2
DEF K_F = 3
DEF K_G = 4
DEF K_RED = 5
DEF K_HARMONIC = 6


cdef inline void _transition(double t, double* h, double* dh) noexcept nogil:
    cdef double g, e, ope
    if t <= 0.0:
        h[0] = 0.0
        dh[0] = 0.0
    elif t >= 1.0:
        h[0] = 1.0
        dh[0] = 0.0
    else:
        g = 1.0 / t - 1.0 / (1.0 - t)
        if g >= EXP_CLIP or g <= -EXP_CLIP:
            # derivative below 1e-290 here; 1/t^2 may overflow
            h[0] = 1.0 / (1.0 + exp(EXP_CLIP if g > 0.0 else -EXP_CLIP))
            dh[0] = 0.0
            return
        e = exp(g)
        ope = 1.0 + e
        h[0] = 1.0 / ope
        dh[0] = e / (ope * ope) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)))


cdef inline void _plateau(const double* c, double t, double* f, double* df) noexcept nogil:
    cdef double h, dh, w
    if t >= c[1] and t <= c[2]:
        f[0] = 1.0
        df[0] = 0.0
    elif t > c[0] and t < c[1]:
        w = c[1] - c[0]
        _transition((t - c[0]) / w, &h, &dh)
        f[0] = h
        df[0] = dh / w
    elif t > c[2] and t < c[3]:
        w = c[3] - c[2]
        _transition((c[3] - t) / w, &h, &dh)
        f[0] = h
        df[0] = -dh / w
    else:
        f[0] = 0.0
        df[0] = 0.0


cdef inline void _ramp(const double* r, double t, double* f, double* df) noexcept nogil:
    cdef double yc = r[0], d = r[1], nu = r[2], s, h, dh
    if t >= yc + d:
        f[0] = 1.0
        df[0] = 0.0
    elif t <= yc:
        f[0] = 0.0
        df[0] = 0.0
    elif t >= yc + nu and t <= yc + d - nu:
        f[0] = (t - yc) / d
        df[0] = 1.0 / d
    elif t < yc + nu:
        s = (t - yc) / nu
        _transition(s, &h, &dh)
        f[0] = (nu / d) * s * h
        df[0] = (h + s * dh) / d
    else:
        s = (yc + d - t) / nu
        _transition(s, &h, &dh)
        f[0] = 1.0 - (nu / d) * s * h
        df[0] = (h + s * dh) / d


cdef inline int _base_dim(const double* p) noexcept nogil:
    cdef int kind = <int>p[P_KIND]
    if kind == K_LEVEL or kind == K_RED:
        return 2
    return 4


cdef inline int _dim(const double* p) noexcept nogil:
    cdef int d = _base_dim(p)
    if p[P_TANGENT] != 0.0:
        return d + d * d
    return d


cdef void _rhs_base(const double* p, const double* z, double* out) noexcept nogil:
    cdef int kind = <int>p[P_KIND]
    cdef double a, da, b, db, c, dc, g, dg, w, ul
    cdef int i, k
    if kind == K_LEVEL:
        _plateau(p + P_C1, z[0], &a, &da)
        _plateau(p + P_C2, z[1], &b, &db)
        out[0] = -a * db
        out[1] = da * b
    elif kind == K_SEC3:
        k = <int>p[P_K]
        i = <int>floor(z[0] / p[P_EPS]) + 1
        if i < 1 or i > k:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0.0
            out[3] = 0.0
            return
        ul = z[0] - (i - 1) * p[P_EPS]
        _plateau(p + P_C1, ul, &a, &da)
        _plateau(p + P_C2, z[1], &b, &db)
        w = i * p[P_COEF]
        out[0] = -w * a * db * z[2]
        out[1] = w * da * b * z[2]
        out[2] = 0.0
        out[3] = w * a * b
    elif kind == K_F:
        _plateau(p + P_C1, z[0], &a, &da)
        _plateau(p + P_C2, z[1], &b, &db)
        _plateau(p + P_C3, z[2], &c, &dc)
        w = p[P_COEF]
        out[0] = -w * a * db * c * z[2]
        out[1] = w * da * b * c * z[2]
        out[2] = 0.0
        out[3] = w * a * b * (dc * z[2] + c)
    elif kind == K_G:
        _plateau(p + P_C1, z[0], &a, &da)
        _plateau(p + P_C2, z[1], &b, &db)
        _plateau(p + P_C3, z[2], &c, &dc)
        _ramp(p + P_RAMP, z[3], &g, &dg)
        w = p[P_COEF]
        out[0] = -w * a * db * c * g * z[2]
        out[1] = w * da * b * c * g * z[2]
        out[2] = -w * a * b * c * dg * z[2]
        out[3] = w * a * b * (dc * z[2] + c) * g
    elif kind == K_RED:
        _plateau(p + P_C3, z[0], &c, &dc)
        _ramp(p + P_RAMP, z[1], &g, &dg)
        w = p[P_COEF]
        out[0] = -w * c * dg * z[0]
        out[1] = w * (dc * z[0] + c) * g
    elif kind == K_HARMONIC:
        w = p[P_COEF]
        out[0] = w * z[1]
        out[1] = -w * z[0]
        out[2] = w * z[3]
        out[3] = -w * z[2]
    else:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0


cdef inline void _transition2(double t, double* h, double* dh, double* ddh) noexcept nogil:
    cdef double g, e, ope, gp, gpp, q
    if t <= 0.0 or t >= 1.0:
        h[0] = 1.0 if t >= 1.0 else 0.0
        dh[0] = 0.0
        ddh[0] = 0.0
        return
    g = 1.0 / t - 1.0 / (1.0 - t)
    if g >= EXP_CLIP or g <= -EXP_CLIP:
        h[0] = 1.0 / (1.0 + exp(EXP_CLIP if g > 0.0 else -EXP_CLIP))
        dh[0] = 0.0
        ddh[0] = 0.0
        return
    e = exp(g)
    ope = 1.0 + e
    gp = -1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t))
    gpp = 2.0 / (t * t * t) - 2.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t))
    q = e / (ope * ope)
    h[0] = 1.0 / ope
    dh[0] = -gp * q
    ddh[0] = -gpp * q - gp * gp * q * (1.0 - e) / ope


cdef inline void _plateau2(const double* c, double t, double* f, double* df,
                           double* ddf) noexcept nogil:
    cdef double h, dh, ddh, w
    if t >= c[1] and t <= c[2]:
        f[0] = 1.0
        df[0] = 0.0
        ddf[0] = 0.0
    elif t > c[0] and t < c[1]:
        w = c[1] - c[0]
        _transition2((t - c[0]) / w, &h, &dh, &ddh)
        f[0] = h
        df[0] = dh / w
        ddf[0] = ddh / (w * w)
    elif t > c[2] and t < c[3]:
        w = c[3] - c[2]
        _transition2((c[3] - t) / w, &h, &dh, &ddh)
        f[0] = h
        df[0] = -dh / w
        ddf[0] = ddh / (w * w)
    else:
        f[0] = 0.0
        df[0] = 0.0
        ddf[0] = 0.0


cdef inline void _ramp2(const double* r, double t, double* f, double* df,
                        double* ddf) noexcept nogil:
    cdef double yc = r[0], d = r[1], nu = r[2], s, h, dh, ddh
    _ramp(r, t, f, df)
    ddf[0] = 0.0
    if t > yc and t < yc + nu:
        s = (t - yc) / nu
        _transition2(s, &h, &dh, &ddh)
        ddf[0] = (2.0 * dh + s * ddh) / (d * nu)
    elif t > yc + d - nu and t < yc + d:
        s = (yc + d - t) / nu
        _transition2(s, &h, &dh, &ddh)
        ddf[0] = -(2.0 * dh + s * ddh) / (d * nu)


cdef void _jac(const double* p, const double* z, double* X, double* D) noexcept nogil:
    """Field X and its Jacobian D (row-major, D[i*d+j] = dX_i/dz_j)."""
    cdef int kind = <int>p[P_KIND]
    cdef int d = _base_dim(p), m, i, k
    cdef double a, da, dda, b, db, ddb, c, dc, ddc, g, dg, ddg, w, x, C0, C1, C2, ul
    for m in range(d * d):
        D[m] = 0.0
    _rhs_base(p, z, X)
    if kind == K_LEVEL:
        _plateau2(p + P_C1, z[0], &a, &da, &dda)
        _plateau2(p + P_C2, z[1], &b, &db, &ddb)
        D[0] = -da * db
        D[1] = -a * ddb
        D[2] = dda * b
        D[3] = da * db
    elif kind == K_SEC3:
        k = <int>p[P_K]
        i = <int>floor(z[0] / p[P_EPS]) + 1
        if i < 1 or i > k:
            return
        ul = z[0] - (i - 1) * p[P_EPS]
        _plateau2(p + P_C1, ul, &a, &da, &dda)
        _plateau2(p + P_C2, z[1], &b, &db, &ddb)
        w = i * p[P_COEF]
        x = z[2]
        D[0] = -w * da * db * x
        D[1] = -w * a * ddb * x
        D[2] = -w * a * db
        D[4] = w * dda * b * x
        D[5] = w * da * db * x
        D[6] = w * da * b
        D[12] = w * da * b
        D[13] = w * a * db
    elif kind == K_F:
        _plateau2(p + P_C1, z[0], &a, &da, &dda)
        _plateau2(p + P_C2, z[1], &b, &db, &ddb)
        _plateau2(p + P_C3, z[2], &c, &dc, &ddc)
        w = p[P_COEF]
        x = z[2]
        C0 = c * x
        C1 = dc * x + c
        C2 = ddc * x + 2.0 * dc
        D[0] = -w * da * db * C0
        D[1] = -w * a * ddb * C0
        D[2] = -w * a * db * C1
        D[4] = w * dda * b * C0
        D[5] = w * da * db * C0
        D[6] = w * da * b * C1
        D[12] = w * da * b * C1
        D[13] = w * a * db * C1
        D[14] = w * a * b * C2
    elif kind == K_G:
        _plateau2(p + P_C1, z[0], &a, &da, &dda)
        _plateau2(p + P_C2, z[1], &b, &db, &ddb)
        _plateau2(p + P_C3, z[2], &c, &dc, &ddc)
        _ramp2(p + P_RAMP, z[3], &g, &dg, &ddg)
        w = p[P_COEF]
        x = z[2]
        C0 = c * x
        C1 = dc * x + c
        C2 = ddc * x + 2.0 * dc
        D[0] = -w * da * db * C0 * g
        D[1] = -w * a * ddb * C0 * g
        D[2] = -w * a * db * C1 * g
        D[3] = -w * a * db * C0 * dg
        D[4] = w * dda * b * C0 * g
        D[5] = w * da * db * C0 * g
        D[6] = w * da * b * C1 * g
        D[7] = w * da * b * C0 * dg
        D[8] = -w * da * b * C0 * dg
        D[9] = -w * a * db * C0 * dg
        D[10] = -w * a * b * C1 * dg
        D[11] = -w * a * b * C0 * ddg
        D[12] = w * da * b * C1 * g
        D[13] = w * a * db * C1 * g
        D[14] = w * a * b * C2 * g
        D[15] = w * a * b * C1 * dg
    elif kind == K_RED:
        _plateau2(p + P_C3, z[0], &c, &dc, &ddc)
        _ramp2(p + P_RAMP, z[1], &g, &dg, &ddg)
        w = p[P_COEF]
        x = z[0]
        C0 = c * x
        C1 = dc * x + c
        C2 = ddc * x + 2.0 * dc
        D[0] = -w * C1 * dg
        D[1] = -w * C0 * ddg
        D[2] = w * C2 * g
        D[3] = w * C1 * dg
    elif kind == K_HARMONIC:
        w = p[P_COEF]
        D[1] = w
        D[4] = -w
        D[11] = w
        D[14] = -w


cdef void _rhs(const double* p, const double* z, double* out) noexcept nogil:
    """Field of the plain state, or of state plus tangent matrix in tangent mode."""
    cdef int d, i, j, m
    cdef double D[16]
    cdef double s
    if p[P_TANGENT] == 0.0:
        _rhs_base(p, z, out)
        return
    d = _base_dim(p)
    _jac(p, z, out, D)
    for i in range(d):
        for j in range(d):
            s = 0.0
            for m in range(d):
                s += D[i * d + m] * z[d + m * d + j]
            out[d + i * d + j] = s


def jacobian_field(double[::1] params, double[:, ::1] Z):
    """Analytic Jacobian of the field at each row of Z, shape (N, d, d)."""
    cdef int d = _base_dim(&params[0])
    cdef Py_ssize_t n, N = Z.shape[0]
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    out = np.empty((N, d, d), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double X[4]
    with nogil:
        for n in range(N):
            _jac(&params[0], &Z[n, 0], X, &o[n, 0, 0])
    return out


# Dormand-Prince 5(4) tableau
DEF A21 = 1.0 / 5.0
DEF A31 = 3.0 / 40.0
DEF A32 = 9.0 / 40.0
DEF A41 = 44.0 / 45.0
DEF A42 = -56.0 / 15.0
DEF A43 = 32.0 / 9.0
DEF A51 = 19372.0 / 6561.0
DEF A52 = -25360.0 / 2187.0
DEF A53 = 64448.0 / 6561.0
DEF A54 = -212.0 / 729.0
DEF A61 = 9017.0 / 3168.0
DEF A62 = -355.0 / 33.0
DEF A63 = 46732.0 / 5247.0
DEF A64 = 49.0 / 176.0
DEF A65 = -5103.0 / 18656.0
DEF B1 = 35.0 / 384.0
DEF B3 = 500.0 / 1113.0
DEF B4 = 125.0 / 192.0
DEF B5 = -2187.0 / 6784.0
DEF B6 = 11.0 / 84.0
DEF E1 = 71.0 / 57600.0
DEF E3 = -71.0 / 16695.0
DEF E4 = 71.0 / 1920.0
DEF E5 = -17253.0 / 339200.0
DEF E6 = 22.0 / 525.0
DEF E7 = -1.0 / 40.0


cdef inline double _rms_scaled(const double* v, const double* z, int d, double rtol, double atol) noexcept nogil:
    cdef double s = 0.0, sc
    cdef int m
    for m in range(d):
        sc = atol + rtol * fabs(z[m])
        s += (v[m] / sc) * (v[m] / sc)
    return sqrt(s / d)


cdef double _initial_step(const double* p, int d, const double* z, const double* f0,
                          double rtol, double atol) noexcept nogil:
    cdef double d0, d1, d2, h0, h1
    cdef double y1[MAXD]
    cdef double f1[MAXD]
    cdef double df[MAXD]
    cdef int m
    d0 = _rms_scaled(z, z, d, rtol, atol)
    d1 = _rms_scaled(f0, z, d, rtol, atol)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    for m in range(d):
        y1[m] = z[m] + h0 * f0[m]
    _rhs(p, y1, f1)
    for m in range(d):
        df[m] = f1[m] - f0[m]
    d2 = _rms_scaled(df, z, d, rtol, atol) / h0
    if fmax(d1, d2) <= 1e-15:
        h1 = fmax(1e-6, h0 * 1e-3)
    else:
        h1 = pow(0.01 / fmax(d1, d2), 0.2)
    return fmin(100.0 * h0, h1)


cdef int _solve(const double* p, int d, double* z, double t, const double* targets, int nt,
                double* out, double rtol, double atol, double hmax, long maxsteps,
                long* nsteps) noexcept nogil:
    """Integrate z from t through each target in order; write the state at each target.

    Returns 0 on success, 1 on step-size underflow, 2 when maxsteps is exceeded.
    On failure the remaining targets receive the last accepted state.
    """
    cdef double k1[MAXD]
    cdef double k2[MAXD]
    cdef double k3[MAXD]
    cdef double k4[MAXD]
    cdef double k5[MAXD]
    cdef double k6[MAXD]
    cdef double k7[MAXD]
    cdef double yt[MAXD]
    cdef double yn[MAXD]
    cdef double er[MAXD]
    cdef double h, hh, rem, err, fac, sc, tgt, dirn, hprev
    cdef int m, ti = 0, zero = 1, clipped, status = 0
    cdef long steps = 0

    _rhs(p, z, k1)
    for m in range(d):
        if k1[m] != 0.0:
            zero = 0
    if zero:
        for ti in range(nt):
            for m in range(d):
                out[ti * d + m] = z[m]
        nsteps[0] = 0
        return 0

    dirn = 1.0 if targets[nt - 1] >= t else -1.0
    h = _initial_step(p, d, z, k1, rtol, atol)
    if h > hmax:
        h = hmax

    while ti < nt:
        tgt = targets[ti]
        rem = (tgt - t) * dirn
        if rem <= 0.0:
            for m in range(d):
                out[ti * d + m] = z[m]
            ti += 1
            continue
        if steps >= maxsteps:
            status = 2
            break
        clipped = 0
        hh = h
        if hh >= rem:
            hh = rem
            clipped = 1
        if hh < 16.0 * MACH_EPS * fmax(fabs(t), 1e-300):
            status = 1
            break
        hh = hh * dirn
        for m in range(d):
            yt[m] = z[m] + hh * A21 * k1[m]
        _rhs(p, yt, k2)
        for m in range(d):
            yt[m] = z[m] + hh * (A31 * k1[m] + A32 * k2[m])
        _rhs(p, yt, k3)
        for m in range(d):
            yt[m] = z[m] + hh * (A41 * k1[m] + A42 * k2[m] + A43 * k3[m])
        _rhs(p, yt, k4)
        for m in range(d):
            yt[m] = z[m] + hh * (A51 * k1[m] + A52 * k2[m] + A53 * k3[m] + A54 * k4[m])
        _rhs(p, yt, k5)
        for m in range(d):
            yt[m] = z[m] + hh * (A61 * k1[m] + A62 * k2[m] + A63 * k3[m] + A64 * k4[m] + A65 * k5[m])
        _rhs(p, yt, k6)
        for m in range(d):
            yn[m] = z[m] + hh * (B1 * k1[m] + B3 * k3[m] + B4 * k4[m] + B5 * k5[m] + B6 * k6[m])
        _rhs(p, yn, k7)
        err = 0.0
        for m in range(d):
            er[m] = hh * (E1 * k1[m] + E3 * k3[m] + E4 * k4[m] + E5 * k5[m] + E6 * k6[m] + E7 * k7[m])
            sc = atol + rtol * fmax(fabs(z[m]), fabs(yn[m]))
            err += (er[m] / sc) * (er[m] / sc)
        err = sqrt(err / d)
        steps += 1
        hh = fabs(hh)
        if err <= 1.0:
            t = tgt if clipped else t + dirn * hh
            for m in range(d):
                z[m] = yn[m]
                k1[m] = k7[m]
            fac = 5.0 if err == 0.0 else fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
            hprev = h
            h = hh * fac
            if clipped and h < hprev:
                h = hprev
            if h > hmax:
                h = hmax
        else:
            h = hh * fmax(0.2, 0.9 * pow(err, -0.2))

    while ti < nt:
        for m in range(d):
            out[ti * d + m] = z[m]
        ti += 1
    nsteps[0] = steps
    return status


cdef int _solve_group(const double* p, int d, int m, double* z, double t, double t1,
                      double rtol, double atol, double hmax, long maxsteps,
                      long* nsteps) noexcept nogil:
    """Integrate m states of dimension d with one shared step sequence.

    Rows whose initial velocity is exactly zero are frozen.  The step error is
    the largest per-row RMS error, so every row meets the tolerance.
    """
    cdef int n = d * m, r, q, status = 0, clipped, live = 0
    cdef double* buf = <double*>malloc(10 * n * sizeof(double))
    cdef char* frozen = <char*>malloc(m * sizeof(char))
    cdef double *k1, *k2, *k3, *k4, *k5, *k6, *k7, *yt, *yn, *er
    cdef double h = 1e300, hh, rem, err, e_row, sc, fac, dirn, hprev
    cdef long steps = 0
    if buf == NULL or frozen == NULL:
        free(buf)
        free(frozen)
        return 3
    k1 = buf
    k2 = buf + n
    k3 = buf + 2 * n
    k4 = buf + 3 * n
    k5 = buf + 4 * n
    k6 = buf + 5 * n
    k7 = buf + 6 * n
    yt = buf + 7 * n
    yn = buf + 8 * n
    er = buf + 9 * n
    for r in range(m):
        _rhs(p, z + r * d, k1 + r * d)
        frozen[r] = 1
        for q in range(d):
            if k1[r * d + q] != 0.0:
                frozen[r] = 0
        if not frozen[r]:
            live += 1
            h = fmin(h, _initial_step(p, d, z + r * d, k1 + r * d, rtol, atol))
    if live == 0 or t1 == t:
        free(buf)
        free(frozen)
        nsteps[0] = 0
        return 0
    dirn = 1.0 if t1 >= t else -1.0
    h = fmin(h, hmax)
    while True:
        rem = (t1 - t) * dirn
        if rem <= 0.0:
            break
        if steps >= maxsteps:
            status = 2
            break
        clipped = 0
        hh = h
        if hh >= rem:
            hh = rem
            clipped = 1
        if hh < 16.0 * MACH_EPS * fmax(fabs(t), 1e-300):
            status = 1
            break
        hh = hh * dirn
        for r in range(m):
            if frozen[r]:
                continue
            _group_stages(p, d, z + r * d, hh, k1 + r * d, k2 + r * d, k3 + r * d, k4 + r * d,
                          k5 + r * d, k6 + r * d, k7 + r * d, yt + r * d, yn + r * d)
        err = 0.0
        for r in range(m):
            if frozen[r]:
                continue
            e_row = 0.0
            for q in range(r * d, r * d + d):
                er[q] = hh * (E1 * k1[q] + E3 * k3[q] + E4 * k4[q] + E5 * k5[q] + E6 * k6[q]
                              + E7 * k7[q])
                sc = atol + rtol * fmax(fabs(z[q]), fabs(yn[q]))
                e_row += (er[q] / sc) * (er[q] / sc)
            e_row = sqrt(e_row / d)
            if e_row > err:
                err = e_row
        steps += 1
        hh = fabs(hh)
        if err <= 1.0:
            t = t1 if clipped else t + dirn * hh
            for r in range(m):
                if frozen[r]:
                    continue
                for q in range(r * d, r * d + d):
                    z[q] = yn[q]
                    k1[q] = k7[q]
            fac = 5.0 if err == 0.0 else fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
            hprev = h
            h = hh * fac
            if clipped and h < hprev:
                h = hprev
            if h > hmax:
                h = hmax
        else:
            h = hh * fmax(0.2, 0.9 * pow(err, -0.2))
    free(buf)
    free(frozen)
    nsteps[0] = steps
    return status


cdef inline void _group_stages(const double* p, int d, const double* z, double hh,
                               const double* k1, double* k2, double* k3, double* k4,
                               double* k5, double* k6, double* k7, double* yt,
                               double* yn) noexcept nogil:
    cdef int q
    for q in range(d):
        yt[q] = z[q] + hh * A21 * k1[q]
    _rhs(p, yt, k2)
    for q in range(d):
        yt[q] = z[q] + hh * (A31 * k1[q] + A32 * k2[q])
    _rhs(p, yt, k3)
    for q in range(d):
        yt[q] = z[q] + hh * (A41 * k1[q] + A42 * k2[q] + A43 * k3[q])
    _rhs(p, yt, k4)
    for q in range(d):
        yt[q] = z[q] + hh * (A51 * k1[q] + A52 * k2[q] + A53 * k3[q] + A54 * k4[q])
    _rhs(p, yt, k5)
    for q in range(d):
        yt[q] = z[q] + hh * (A61 * k1[q] + A62 * k2[q] + A63 * k3[q] + A64 * k4[q] + A65 * k5[q])
    _rhs(p, yt, k6)
    for q in range(d):
        yn[q] = z[q] + hh * (B1 * k1[q] + B3 * k3[q] + B4 * k4[q] + B5 * k5[q] + B6 * k6[q])
    _rhs(p, yn, k7)


def integrate_grouped(double[::1] params, double[:, ::1] Z, cnp.int64_t[::1] starts,
                      double t0, double t1, double rtol, double atol, double max_step,
                      long max_steps):
    """Lockstep integration of contiguous row groups ``Z[starts[g]:starts[g+1]]``."""
    cdef int d = _dim(&params[0])
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    out = np.array(Z, dtype=np.float64, copy=True)
    cdef Py_ssize_t G = starts.shape[0] - 1, g
    status = np.zeros(Z.shape[0], dtype=np.int8)
    cdef double[:, ::1] o = out
    cdef cnp.int8_t[::1] st = status
    cdef long cnt
    cdef int code, r
    with nogil:
        for g in range(G):
            if starts[g + 1] <= starts[g]:
                continue
            code = _solve_group(&params[0], d, <int>(starts[g + 1] - starts[g]), &o[starts[g], 0],
                                t0, t1, rtol, atol, max_step, max_steps, &cnt)
            for r in range(<int>starts[g], <int>starts[g + 1]):
                st[r] = code
    return out, status


def field(double[::1] params, double[:, ::1] Z):
    cdef Py_ssize_t n, N = Z.shape[0]
    cdef int d = _dim(&params[0])
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    out = np.empty((N, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double buf[MAXD]
    cdef int m
    with nogil:
        for n in range(N):
            _rhs(&params[0], &Z[n, 0], buf)
            for m in range(d):
                o[n, m] = buf[m]
    return out


def integrate(double[::1] params, double[:, ::1] Z, double t0, double t1,
              double rtol, double atol, double max_step, long max_steps):
    cdef Py_ssize_t n, N = Z.shape[0]
    cdef int d = _dim(&params[0])
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    out = np.array(Z, dtype=np.float64, copy=True)
    status = np.zeros(N, dtype=np.int8)
    nsteps = np.zeros(N, dtype=np.int64)
    cdef double[:, ::1] o = out
    cdef cnp.int8_t[::1] st = status
    cdef cnp.int64_t[::1] ns = nsteps
    cdef double tgt[1]
    cdef double res[MAXD]
    cdef double zz[MAXD]
    cdef long cnt
    cdef int m
    tgt[0] = t1
    if t1 == t0:
        return out, status, nsteps
    with nogil:
        for n in range(N):
            for m in range(d):
                zz[m] = o[n, m]
            st[n] = _solve(&params[0], d, zz, t0, tgt, 1, res, rtol, atol, max_step, max_steps, &cnt)
            ns[n] = cnt
            if not (st[n] == 0 and cnt == 0):
                for m in range(d):
                    o[n, m] = res[m]
    return out, status, nsteps


def integrate_times(double[::1] params, double[:, ::1] Z, double[:, ::1] times, double t0,
                    double rtol, double atol, double max_step, long max_steps):
    """Integrate each row of Z from t0 through the sorted targets in the matching row of times."""
    cdef Py_ssize_t n, N = Z.shape[0]
    cdef int T = times.shape[1]
    cdef int d = _dim(&params[0])
    if Z.shape[1] != d:
        raise ValueError(f"state dimension {Z.shape[1]} does not match field dimension {d}")
    if times.shape[0] != N:
        raise ValueError("times must have one row per state")
    out = np.empty((N, T, d), dtype=np.float64)
    status = np.zeros(N, dtype=np.int8)
    cdef double[:, :, ::1] o = out
    cdef cnp.int8_t[::1] st = status
    cdef double zz[MAXD]
    cdef long cnt
    cdef int m
    with nogil:
        for n in range(N):
            for m in range(d):
                zz[m] = Z[n, m]
            st[n] = _solve(&params[0], d, zz, t0, &times[n, 0], T, &o[n, 0, 0],
                           rtol, atol, max_step, max_steps, &cnt)
    return out, status


# ---------------------------------------------------------------- rasters

cdef inline int _stamp(int* counts, int nx, int ny, double px, double py, double r,
                       int delta, long* occ, int* rowc, int* colc) noexcept nogil:
    """Add ``delta`` to the cell holding (px, py) and every cell whose centre is within r.

    Returns 1 if a touched cell lies on or outside the outer ring of the raster.
    """
    cdef int ix0 = <int>floor(px), iy0 = <int>floor(py)
    cdef int reach = <int>ceil(r) + 1
    cdef int ix, iy, idx, old, bad = 0
    cdef double dx, dy, r2 = r * r
    for iy in range(iy0 - reach, iy0 + reach + 1):
        for ix in range(ix0 - reach, ix0 + reach + 1):
            if not (ix == ix0 and iy == iy0):
                dx = ix + 0.5 - px
                dy = iy + 0.5 - py
                if dx * dx + dy * dy > r2:
                    continue
            if ix < 1 or iy < 1 or ix >= nx - 1 or iy >= ny - 1:
                bad = 1
                continue
            idx = iy * nx + ix
            old = counts[idx]
            counts[idx] = old + delta
            if old == 0 and delta > 0:
                occ[0] += 1
                rowc[iy] += 1
                colc[ix] += 1
            elif old + delta == 0 and delta < 0:
                occ[0] -= 1
                rowc[iy] -= 1
                colc[ix] -= 1
    return bad


cdef inline void _bump_cell(int* counts, int nx, int idx, int delta, long* occ,
                            int* rowc, int* colc) noexcept nogil:
    cdef int old = counts[idx]
    counts[idx] = old + delta
    if old == 0 and delta > 0:
        occ[0] += 1
        rowc[idx // nx] += 1
        colc[idx % nx] += 1
    elif old + delta == 0 and delta < 0:
        occ[0] -= 1
        rowc[idx // nx] -= 1
        colc[idx % nx] -= 1


cdef inline int _seed(const int* counts, cnp.uint8_t* seen, int* stack, int top, int idx) noexcept nogil:
    if not seen[idx] and counts[idx] == 0:
        seen[idx] = 1
        stack[top] = idx
        top += 1
    return top


cdef long _hull(const int* counts, int nx, int ny, const int* rowc, const int* colc,
                cnp.uint8_t* seen, int* stack) noexcept nogil:
    """Cells of the simply connected hull: bbox (grown by one ring) minus exterior."""
    cdef int x0 = 0, x1 = nx - 1, y0 = 0, y1 = ny - 1
    cdef int ix, iy, idx, top = 0, cx, cy, w, h
    cdef long ext = 0
    while x0 < nx and colc[x0] == 0:
        x0 += 1
    if x0 == nx:
        return 0
    while colc[x1] == 0:
        x1 -= 1
    while rowc[y0] == 0:
        y0 += 1
    while rowc[y1] == 0:
        y1 -= 1
    x0 -= 1
    y0 -= 1
    x1 += 1
    y1 += 1
    w = x1 - x0 + 1
    h = y1 - y0 + 1
    for iy in range(y0, y1 + 1):
        for ix in range(x0, x1 + 1):
            seen[iy * nx + ix] = 0
    for ix in range(x0, x1 + 1):
        top = _seed(counts, seen, stack, top, y0 * nx + ix)
        top = _seed(counts, seen, stack, top, y1 * nx + ix)
    for iy in range(y0 + 1, y1):
        top = _seed(counts, seen, stack, top, iy * nx + x0)
        top = _seed(counts, seen, stack, top, iy * nx + x1)
    while top > 0:
        top -= 1
        idx = stack[top]
        ext += 1
        cy = idx // nx
        cx = idx - cy * nx
        if cx > x0:
            if not seen[idx - 1] and counts[idx - 1] == 0:
                seen[idx - 1] = 1
                stack[top] = idx - 1
                top += 1
        if cx < x1:
            if not seen[idx + 1] and counts[idx + 1] == 0:
                seen[idx + 1] = 1
                stack[top] = idx + 1
                top += 1
        if cy > y0:
            if not seen[idx - nx] and counts[idx - nx] == 0:
                seen[idx - nx] = 1
                stack[top] = idx - nx
                top += 1
        if cy < y1:
            if not seen[idx + nx] and counts[idx + nx] == 0:
                seen[idx + nx] = 1
                stack[top] = idx + nx
                top += 1
    return <long>w * h - ext


def hull_cells(cnp.uint8_t[:, ::1] occ):
    """Return (occupied cells, hull cells, status); status 1 if the outer ring is occupied."""
    cdef int ny = occ.shape[0], nx = occ.shape[1]
    counts = np.ascontiguousarray(occ, dtype=np.int32)
    rowc = np.ascontiguousarray(counts.sum(axis=1), dtype=np.int32)
    colc = np.ascontiguousarray(counts.sum(axis=0), dtype=np.int32)
    seen = np.zeros(nx * ny, dtype=np.uint8)
    stack = np.empty(nx * ny, dtype=np.int32)
    cdef int[:, ::1] cv = counts
    cdef int[::1] rv = rowc
    cdef int[::1] colv = colc
    cdef cnp.uint8_t[::1] sv = seen
    cdef int[::1] stv = stack
    cdef long n_occ = int(counts.sum())
    if n_occ == 0:
        return 0, 0, 0
    if rowc[0] or rowc[ny - 1] or colc[0] or colc[nx - 1]:
        return n_occ, -1, 1
    cdef long hc
    with nogil:
        hc = _hull(&cv[0, 0], nx, ny, &rv[0], &colv[0], &sv[0], &stv[0])
    return n_occ, hc, 0


def stamp_points(double[::1] px, double[::1] py, int nx, int ny, double radius):
    """Rasterise points (cell units) with the dilation rule into a uint8 occupancy grid."""
    counts = np.zeros((ny, nx), dtype=np.int32)
    rowc = np.zeros(ny, dtype=np.int32)
    colc = np.zeros(nx, dtype=np.int32)
    cdef int[:, ::1] cv = counts
    cdef int[::1] rv = rowc
    cdef int[::1] colv = colc
    cdef long occ = 0
    cdef int bad = 0
    cdef Py_ssize_t n
    with nogil:
        for n in range(px.shape[0]):
            bad |= _stamp(&cv[0, 0], nx, ny, px[n], py[n], radius, 1, &occ, &rv[0], &colv[0])
    return (counts > 0).astype(np.uint8), bad


def sweep_slabs(int[::1] rec_a, int[::1] rec_bs, int[::1] rec_be, cnp.int8_t[::1] rec_kind,
                cnp.int64_t[::1] rec_lo, cnp.int64_t[::1] rec_hi,
                double[::1] pts_x, double[::1] pts_y, int[::1] grp_cells,
                int nx, int ny, double radius, bint want_hull):
    """Sweep each x-slab upward in y, maintaining a counted raster of stamped records.

    A record ``(a, bs, be, kind, lo, hi)`` is present in slabs ``(a, b)`` for
    ``bs <= b <= be``.  Kind 0 stamps points ``lo:hi`` with the dilation rule,
    kind 1 increments the precomputed cells ``grp_cells[lo:hi]``.
    Returns arrays ``(a, b, outer_cells, hull_cells)`` for every nonempty slab and
    a status flag (1 when something touched the outer raster ring).
    """
    cdef Py_ssize_t R = rec_a.shape[0]
    if R == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), e.copy(), e.copy(), 0
    order_in = np.lexsort((np.asarray(rec_bs), np.asarray(rec_a))).astype(np.int64)
    order_out = np.lexsort((np.asarray(rec_be), np.asarray(rec_a))).astype(np.int64)
    cdef cnp.int64_t[::1] oin = order_in
    cdef cnp.int64_t[::1] oout = order_out
    counts = np.zeros(nx * ny, dtype=np.int32)
    rowc = np.zeros(ny, dtype=np.int32)
    colc = np.zeros(nx, dtype=np.int32)
    seen = np.zeros(nx * ny, dtype=np.uint8)
    stack = np.empty(nx * ny, dtype=np.int32)
    cdef int[::1] cv = counts
    cdef int[::1] rv = rowc
    cdef int[::1] colv = colc
    cdef cnp.uint8_t[::1] sv = seen
    cdef int[::1] stv = stack

    cap = 1024
    res_a = np.empty(cap, dtype=np.int64)
    res_b = np.empty(cap, dtype=np.int64)
    res_o = np.empty(cap, dtype=np.int64)
    res_h = np.empty(cap, dtype=np.int64)
    cdef Py_ssize_t nres = 0

    cdef Py_ssize_t pin = 0, pout = 0, r, q
    cdef int a, b, status = 0
    cdef long occ = 0, hull = 0, active = 0
    cdef bint dirty
    cdef cnp.int64_t[::1] va, vb, vo, vh

    while pin < R:
        a = rec_a[oin[pin]]
        b = rec_bs[oin[pin]]
        active = 0
        dirty = True
        while True:
            with nogil:
                # enter every record of slab column a starting at b
                while pin < R and rec_a[oin[pin]] == a and rec_bs[oin[pin]] == b:
                    r = oin[pin]
                    if rec_kind[r] == 0:
                        for q in range(rec_lo[r], rec_hi[r]):
                            status |= _stamp(&cv[0], nx, ny, pts_x[q], pts_y[q], radius, 1,
                                             &occ, &rv[0], &colv[0])
                    else:
                        for q in range(rec_lo[r], rec_hi[r]):
                            _bump_cell(&cv[0], nx, grp_cells[q], 1, &occ, &rv[0], &colv[0])
                    pin += 1
                    active += 1
                    dirty = True
                if dirty:
                    if want_hull and occ > 0:
                        if rv[0] or rv[ny - 1] or colv[0] or colv[nx - 1]:
                            status |= 1
                            hull = -1
                        else:
                            hull = _hull(&cv[0], nx, ny, &rv[0], &colv[0], &sv[0], &stv[0])
                    else:
                        hull = 0
                    dirty = False
            if occ > 0:
                if nres == cap:
                    cap *= 2
                    res_a = np.resize(res_a, cap)
                    res_b = np.resize(res_b, cap)
                    res_o = np.resize(res_o, cap)
                    res_h = np.resize(res_h, cap)
                va = res_a
                vb = res_b
                vo = res_o
                vh = res_h
                va[nres] = a
                vb[nres] = b
                vo[nres] = occ
                vh[nres] = hull
                nres += 1
            with nogil:
                # leave every record of slab column a ending at b
                while pout < R and rec_a[oout[pout]] == a and rec_be[oout[pout]] == b:
                    r = oout[pout]
                    if rec_kind[r] == 0:
                        for q in range(rec_lo[r], rec_hi[r]):
                            _stamp(&cv[0], nx, ny, pts_x[q], pts_y[q], radius, -1,
                                   &occ, &rv[0], &colv[0])
                    else:
                        for q in range(rec_lo[r], rec_hi[r]):
                            _bump_cell(&cv[0], nx, grp_cells[q], -1, &occ, &rv[0], &colv[0])
                    pout += 1
                    active -= 1
                    dirty = True
            if active == 0:
                if pin < R and rec_a[oin[pin]] == a:
                    b = rec_bs[oin[pin]]
                    continue
                break
            b += 1
        if occ != 0:
            status |= 2
            break
    return res_a[:nres].copy(), res_b[:nres].copy(), res_o[:nres].copy(), res_h[:nres].copy(), status
