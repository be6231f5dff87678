"""Smooth cutoff functions with exact plateaus and an exact linear ramp.

Every profile is built from the canonical C-infinity step

    h(t) = s(t) / (s(t) + s(1 - t)),    s(t) = exp(-1/t) for t > 0, else 0,

which is exactly 0 for t <= 0 and exactly 1 for t >= 1.  Evaluation branches on
interval membership first, so zero regions and plateaus are bitwise exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EXP_CLIP = 700.0


def transition(t):
    """Return ``(h(t), h'(t))`` for the canonical smooth step, vectorised."""
    t = np.asarray(t, dtype=float)
    h = np.where(t >= 1.0, 1.0, 0.0)
    dh = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    if np.any(inside):
        ti = t[inside]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            raw = 1.0 / ti - 1.0 / (1.0 - ti)
            g = np.clip(raw, -_EXP_CLIP, _EXP_CLIP)
            e = np.exp(g)
            onepe = 1.0 + e
            h[inside] = 1.0 / onepe
            d = e / (onepe * onepe) * (1.0 / (ti * ti) + 1.0 / ((1.0 - ti) * (1.0 - ti)))
        # derivative below 1e-290 where the exponent is clipped; 1/t^2 may overflow there
        dh[inside] = np.where(np.abs(raw) >= _EXP_CLIP, 0.0, d)
    return h, dh


def transition2(t):
    """Return ``(h, h', h'')`` for the canonical smooth step, vectorised."""
    t = np.asarray(t, dtype=float)
    h, dh = transition(t)
    ddh = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    if np.any(inside):
        ti = t[inside]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            raw = 1.0 / ti - 1.0 / (1.0 - ti)
            e = np.exp(np.clip(raw, -_EXP_CLIP, _EXP_CLIP))
            gp = -1.0 / (ti * ti) - 1.0 / ((1.0 - ti) * (1.0 - ti))
            gpp = 2.0 / ti**3 - 2.0 / (1.0 - ti) ** 3
            onepe = 1.0 + e
            q = e / (onepe * onepe)
            d2 = -gpp * q - gp * gp * q * (1.0 - e) / onepe
        ddh[inside] = np.where(np.abs(raw) >= _EXP_CLIP, 0.0, d2)
    return h, dh, ddh


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class PlateauCutoff:
    """0 outside ``[t0, t3]``, 1 on ``[t1, t2]``, smooth monotone ramps between."""

    t0: float
    t1: float
    t2: float
    t3: float

    def __post_init__(self):
        if not (self.t0 < self.t1 <= self.t2 < self.t3):
            raise ValueError(
                f"breakpoints must satisfy t0 < t1 <= t2 < t3, got "
                f"({self.t0}, {self.t1}, {self.t2}, {self.t3})"
            )

    @property
    def support(self) -> tuple[float, float]:
        return (self.t0, self.t3)

    @property
    def plateau(self) -> tuple[float, float]:
        return (self.t1, self.t2)

    def params(self) -> tuple[float, float, float, float]:
        return (self.t0, self.t1, self.t2, self.t3)

    def evaluate(self, t, with_deriv: bool = False):
        ta = np.asarray(t, dtype=float)
        val = np.zeros_like(ta)
        der = np.zeros_like(ta)
        val[(ta >= self.t1) & (ta <= self.t2)] = 1.0
        up = (ta > self.t0) & (ta < self.t1)
        if np.any(up):
            w = self.t1 - self.t0
            h, dh = transition((ta[up] - self.t0) / w)
            val[up] = h
            der[up] = dh / w
        down = (ta > self.t2) & (ta < self.t3)
        if np.any(down):
            w = self.t3 - self.t2
            h, dh = transition((self.t3 - ta[down]) / w)
            val[down] = h
            der[down] = -dh / w
        if with_deriv:
            return _scalar_or_array(val, t), _scalar_or_array(der, t)
        return _scalar_or_array(val, t)

    __call__ = evaluate

    def deriv(self, t):
        return self.evaluate(t, with_deriv=True)[1]


@dataclass(frozen=True)
class RampCutoff:
    """0 below ``y_check``, 1 above ``y_check + delta``, exactly linear in between
    except on two margins of width ``nu`` where it is blended smoothly.

    On the lower margin the profile is ``(nu/delta) * s * h(s)`` with
    ``s = (t - y_check)/nu``; the upper margin is the mirror image.  Both are
    C-infinity, monotone, and meet the line ``(t - y_check)/delta`` with matching
    value and slope.
    """

    y_check: float
    delta: float
    nu: float

    def __post_init__(self):
        if not (self.delta > 0 and 0 < 2 * self.nu < self.delta):
            raise ValueError(
                f"ramp needs 0 < 2*nu < delta, got delta={self.delta}, nu={self.nu}"
            )

    @property
    def support(self) -> tuple[float, float]:
        return (self.y_check, np.inf)

    @property
    def linear_segment(self) -> tuple[float, float]:
        return (self.y_check + self.nu, self.y_check + self.delta - self.nu)

    def params(self) -> tuple[float, float, float]:
        return (self.y_check, self.delta, self.nu)

    def evaluate(self, t, with_deriv: bool = False):
        ta = np.asarray(t, dtype=float)
        yc, d, nu = self.y_check, self.delta, self.nu
        val = np.where(ta >= yc + d, 1.0, 0.0)
        der = np.zeros_like(ta)
        lin = (ta >= yc + nu) & (ta <= yc + d - nu)
        val[lin] = (ta[lin] - yc) / d
        der[lin] = 1.0 / d
        lo = (ta > yc) & (ta < yc + nu)
        if np.any(lo):
            s = (ta[lo] - yc) / nu
            h, dh = transition(s)
            val[lo] = (nu / d) * s * h
            der[lo] = (h + s * dh) / d
        hi = (ta > yc + d - nu) & (ta < yc + d)
        if np.any(hi):
            s = (yc + d - ta[hi]) / nu
            h, dh = transition(s)
            val[hi] = 1.0 - (nu / d) * s * h
            der[hi] = (h + s * dh) / d
        if with_deriv:
            return _scalar_or_array(val, t), _scalar_or_array(der, t)
        return _scalar_or_array(val, t)

    __call__ = evaluate

    def deriv(self, t):
        return self.evaluate(t, with_deriv=True)[1]


def make_plateau_cutoff(t0: float, t1: float, t2: float, t3: float) -> PlateauCutoff:
    return PlateauCutoff(float(t0), float(t1), float(t2), float(t3))


def make_ramp_cutoff(y_check: float, delta: float, nu: float) -> RampCutoff:
    return RampCutoff(float(y_check), float(delta), float(nu))


def eval_cutoff(c, t):
    return c.evaluate(t)


def eval_deriv(c, t):
    return c.deriv(t)
