import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sectionflow.cutoffs import (
    PlateauCutoff,
    RampCutoff,
    eval_cutoff,
    eval_deriv,
    make_plateau_cutoff,
    make_ramp_cutoff,
    transition,
    transition2,
)
from sectionflow.geometry import derive_scales, region_family
from sectionflow.hamiltonians import ramp_cutoff, standard_cutoffs

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)


def test_transition_endpoints_and_midpoint():
    h, dh = transition(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert list(h) == [0.0, 0.0, 0.5, 1.0, 1.0]
    assert dh[0] == dh[1] == dh[3] == dh[4] == 0.0
    assert dh[2] > 0


@given(st.floats(min_value=-2, max_value=3, allow_nan=False))
def test_transition_symmetry(t):
    a, _ = transition(np.array([t]))
    b, _ = transition(np.array([1 - t]))
    assert a[0] + b[0] == pytest.approx(1.0, abs=1e-15)


def test_transition_strictly_increasing():
    h, _ = transition(np.linspace(0.05, 0.95, 5001))
    assert np.all(np.diff(h) > 0)


@given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_transition_derivatives_finite_near_edges(t):
    h, dh, ddh = transition2(np.array([t, 1.0 - t, t * 1e-300]))
    assert np.all(np.isfinite(h)) and np.all(np.isfinite(dh)) and np.all(np.isfinite(ddh))
    assert np.all(dh >= 0.0)


def test_transition_derivatives_match_finite_differences(rng):
    t = rng.uniform(0.02, 0.98, 200)
    s = 1e-6
    h, dh, ddh = transition2(t)
    fd1 = (transition(t + s)[0] - transition(t - s)[0]) / (2 * s)
    fd2 = (transition(t + s)[1] - transition(t - s)[1]) / (2 * s)
    assert np.allclose(dh, fd1, rtol=1e-6, atol=1e-9)
    assert np.allclose(ddh, fd2, rtol=1e-5, atol=1e-7)


def test_transition_value_is_integral_of_derivative():
    # h(1/2) = integral of h' over [0, 1/2]
    val, _ = integrate.quad(lambda t: transition(np.array([t]))[1][0], 0.0, 0.5, epsabs=1e-13)
    assert val == pytest.approx(0.5, abs=1e-10)


def test_f1_breakpoints_for_k2():
    p = derive_scales(2)
    f1 = standard_cutoffs(p).f1
    assert f1.params() == pytest.approx((p.delta, 2 * p.delta, p.eps - 2 * p.delta, p.eps - p.delta))
    assert f1(math.pi / 8) == 1.0
    assert f1(0.0) == 0.0


def test_plateau_midpoints():
    c = make_plateau_cutoff(0.1, 0.3, 0.6, 1.0)
    assert c((0.3 + 0.6) / 2) == 1.0
    ramp_mid = c((0.1 + 0.3) / 2)
    assert 0 < ramp_mid < 1
    assert ramp_mid == pytest.approx(transition(np.array([0.5]))[0][0], abs=1e-15)


@pytest.mark.parametrize("bad", [(0, 0, 1, 2), (0, 2, 1, 3), (0, 1, 2, 2), (1, 0.5, 2, 3)])
def test_plateau_rejects_unordered_breakpoints(bad):
    with pytest.raises(ValueError):
        make_plateau_cutoff(*bad)


@given(finite)
def test_plateau_exact_zero_and_one_sets(t):
    c = PlateauCutoff(-1.0, -0.5, 0.5, 2.0)
    v, d = c.evaluate(t, with_deriv=True)
    assert 0.0 <= v <= 1.0
    if t <= -1.0 or t >= 2.0:
        assert v == 0.0 and d == 0.0
    if -0.5 <= t <= 0.5:
        assert v == 1.0 and d == 0.0
    if -1.0 < t < -0.5:
        assert d >= 0.0
    if 0.5 < t < 2.0:
        assert d <= 0.0


def test_scalar_input_returns_float():
    c = PlateauCutoff(0.0, 1.0, 2.0, 3.0)
    assert isinstance(c(0.5), float)
    assert isinstance(eval_deriv(c, 0.5), float)
    assert eval_cutoff(c, 1.5) == 1.0


def _all_cutoffs(k):
    p = derive_scales(k)
    cut = standard_cutoffs(p)
    out = [(n, getattr(cut, n)) for n in ("f1", "f2", "f3", "g1", "g2", "g3")]
    out += [(f"g4_{i}", ramp_cutoff(p, i)) for i in range(1, k + 1)]
    return out


@pytest.mark.parametrize("k", [2, 4, 8])
def test_every_cutoff_derivative_matches_finite_differences(k):
    rng = np.random.default_rng(k)
    for name, c in _all_cutoffs(k):
        lo, hi = (c.t0, c.t3) if isinstance(c, PlateauCutoff) else (c.y_check, c.y_check + c.delta)
        t = rng.uniform(lo, hi, 1000)
        s = 1e-6 * (hi - lo)
        fd = (c(t + s) - c(t - s)) / (2 * s)
        d = c.deriv(t)
        scale = np.maximum(np.abs(d), 1.0 / (hi - lo))
        assert np.max(np.abs(fd - d) / scale) < 1e-5, name


@pytest.mark.parametrize("k", [2, 4, 8])
def test_every_cutoff_is_bitwise_zero_off_support(k):
    for name, c in _all_cutoffs(k):
        lo = c.support[0]
        t = np.linspace(lo - 1.0, lo, 101)
        assert np.all(c(t) == 0.0), name
        if isinstance(c, PlateauCutoff):
            t = np.linspace(c.t3, c.t3 + 1.0, 101)
            assert np.all(c(t) == 0.0), name


@pytest.mark.parametrize("k", [2, 4, 8])
def test_g3_increasing_below_eps_minus_delta(k):
    p = derive_scales(k)
    g3 = standard_cutoffs(p).g3
    t = np.linspace(-1.0, p.eps - p.delta, 5001)
    assert np.all(g3.deriv(t) >= 0.0)


def test_ramp_values_for_k2():
    p = derive_scales(2)
    fam = region_family(p)
    g4 = ramp_cutoff(p, 1)
    assert fam.y_check[0] == pytest.approx(1 + p.delta)
    assert g4(g4.y_check) == 0.0
    assert g4(g4.y_check + p.delta) == 1.0
    # exact up to the rounding of the argument y_check + delta/2
    assert g4(g4.y_check + p.delta / 2) == pytest.approx(0.5, abs=1e-15)
    assert g4(g4.y_check + p.nu) == pytest.approx(1 / 8, abs=1e-15)
    assert g4.deriv(g4.y_check + p.delta / 2) == pytest.approx(1 / p.delta, rel=1e-15)


def test_ramp_linear_segment_is_exact():
    g4 = make_ramp_cutoff(1.25, 0.25, 0.03125)
    a, b = g4.linear_segment
    t = np.linspace(a, b, 100)
    assert np.max(np.abs(g4(t) - (t - 1.25) / 0.25)) == 0.0


def test_ramp_margins_join_value_and_slope():
    g4 = make_ramp_cutoff(1.0, 0.2, 0.02)
    for edge, side in ((1.02, -1), (1.18, 1)):
        inner, outer = edge - side * 1e-9, edge + side * 1e-9
        assert g4(inner) == pytest.approx(g4(outer), abs=2e-8)
        assert g4.deriv(inner) == pytest.approx(g4.deriv(outer), rel=1e-6)


@given(st.floats(min_value=0.5, max_value=2.0), st.floats(min_value=0.01, max_value=1.0),
       st.floats(min_value=0.01, max_value=0.49))
@settings(max_examples=50)
def test_ramp_monotone_and_bounded(yc, d, frac):
    g4 = RampCutoff(yc, d, frac * d)
    t = np.linspace(yc - d, yc + 2 * d, 2001)
    v, dv = g4.evaluate(t, with_deriv=True)
    assert np.all(np.diff(v) >= -1e-15)
    assert np.all(dv >= 0.0)
    assert np.all((v >= 0.0) & (v <= 1.0))


@pytest.mark.parametrize("nu", [0.1, 0.2, 0.0, -0.01])
def test_ramp_rejects_wide_margins(nu):
    with pytest.raises(ValueError):
        make_ramp_cutoff(1.0, 0.2, nu)
