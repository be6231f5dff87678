import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sectionflow.geometry import (
    Interval,
    IntervalUnion,
    Rect2,
    RectAnnulus,
    derive_scales,
    region_family,
)


def test_scales_for_k2():
    p = derive_scales(2)
    assert p.eps == pytest.approx(1.570796, abs=1e-6)
    assert p.delta == pytest.approx(0.196350, abs=1e-6)
    assert p.nu == pytest.approx(0.024544, abs=1e-6)


def test_scales_trivial_cases():
    assert derive_scales(4).eps == math.pi / 4
    assert derive_scales(16).delta == pytest.approx(math.pi / 1024, rel=1e-15)


@given(st.integers(min_value=2, max_value=10_000))
def test_scale_identities(k):
    p = derive_scales(k)
    assert p.eps * k == pytest.approx(math.pi, rel=1e-15)
    assert 4 * k * p.delta == pytest.approx(p.eps, rel=1e-15)
    assert 4 * k * p.nu == pytest.approx(p.delta, rel=1e-15)


@pytest.mark.parametrize("k", [1, 0, -3, 2.5])
def test_scales_reject_invalid_k(k):
    with pytest.raises(ValueError):
        derive_scales(k)


def test_rect_and_interval_invariants():
    with pytest.raises(ValueError):
        Rect2(1, 0, 0, 1)
    with pytest.raises(ValueError):
        Interval(1, 0)
    r = Rect2(0, 2, 0, 1)
    assert r.area == 2
    assert r.inset(0.25).area == pytest.approx(1.5 * 0.5)
    assert r.intersection_area(Rect2(1, 3, 0.5, 2)) == pytest.approx(0.5)
    ann = RectAnnulus(r, r.inset(0.25))
    assert ann.area == pytest.approx(2 - 0.75)
    assert bool(ann.contains(0.1, 0.5)) and not bool(ann.contains(1.0, 0.5))
    # the inner boundary belongs to the closed annulus
    assert bool(ann.contains(0.25, 0.5))
    u = IntervalUnion((Interval(0, 1), Interval(2, 3)))
    assert u.length == 2 and bool(u.contains(2.5)) and not bool(u.contains(1.5))


def test_k2_rectangles_and_markers(fam2):
    r2 = fam2.R2[0]
    assert (r2.umin, r2.umax, r2.vmin, r2.vmax) == pytest.approx((0.392699, 1.178097, 0.392699, 0.607301), abs=1e-6)
    assert fam2.y_check[0] == pytest.approx(1.196350, abs=1e-6)
    assert fam2.y_hat[0] == pytest.approx(2 - math.pi / 2 + math.pi / 8, abs=1e-12)
    assert fam2.y_hat[0] == pytest.approx(0.821903, abs=1e-6)
    assert fam2.Q is None


@pytest.mark.parametrize("k", [2, 3, 4, 8, 16])
def test_marker_formulas(k):
    p = derive_scales(k)
    fam = region_family(p)
    for i in range(1, k + 1):
        assert fam.y_check[i - 1] == pytest.approx(1 + (2 * i - 1) * p.delta)
        assert fam.y_hat[i - 1] == pytest.approx(2 * i - p.eps + 2 * i * p.delta)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_blocks_tile_P(k):
    fam = region_family(derive_scales(k))
    assert sum(r.area for r in fam.R) == pytest.approx(math.pi, abs=1e-12)
    assert fam.R[0].umin == 0.0 and fam.R[-1].umax == pytest.approx(math.pi)
    for a, b in zip(fam.R, fam.R[1:]):
        assert a.umax == pytest.approx(b.umin, abs=1e-15)
    assert fam.R[1].umin == pytest.approx(fam.R[0].umin + fam.p.eps)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_annulus_area_exact_value_and_claimed_bound(k):
    p = derive_scales(k)
    fam = region_family(p)
    eps, d = p.eps, p.delta
    # brute-force oracle: rectangle areas of R minus R''
    brute = eps * 1.0 - (eps - 4 * d) * (1 - 4 * d)
    assert fam.annulus_union_area() == pytest.approx(brute, rel=1e-13)
    assert fam.A[0].area + fam.A1[0].area == pytest.approx(brute, rel=1e-13)
    assert brute == pytest.approx(4 * d * (1 + eps - 4 * d), rel=1e-13)
    # the claimed eps/k is too small by the factor (1 + eps - eps/k); (eps/k)(1+eps) holds
    assert brute > eps / k
    assert brute <= (eps / k) * (1 + eps)


def test_annulus_area_k2_value(fam2):
    assert fam2.annulus_union_area() == pytest.approx(1.402249, abs=1e-6)


def test_locate_support_cell_examples(fam2):
    assert fam2.locate_support_cell(np.array([0.785, 0.5, 0.785, 0.0])) == (1, 0)
    assert fam2.locate_support_cell(np.array([-1.0, 0.5, 0.785, 0.0])) is None
    assert fam2.locate_support_cell(np.array([fam2.p.eps, 0.5, 0.785, 0.0])) is None


@pytest.mark.parametrize("k", [2, 4])
def test_support_boxes_disjoint(k):
    p = derive_scales(k)
    fam = region_family(p)
    boxes = []
    for i in range(1, k + 1):
        for j in range(-3, 4):
            rn, iv = fam.R_nu[i - 1], fam.I_ij(i, j)
            boxes.append(((i, j), rn, iv))
    for (c1, r1, i1), (c2, r2, i2) in itertools.combinations(boxes, 2):
        # closed x-intervals of one block touch at endpoints; dispatch uses half-open cells
        tol = 1e-12
        u_overlap = r1.umin < r2.umax - tol and r2.umin < r1.umax - tol
        x_overlap = i1.lo < i2.hi - tol and i2.lo < i1.hi - tol
        assert not (u_overlap and x_overlap), (c1, c2)


@given(st.floats(min_value=-20, max_value=20, allow_nan=False))
def test_x_cells_partition_axis(x):
    p = derive_scales(4)
    fam = region_family(p)
    i0, j0 = fam.x_cell(np.array([x]))
    lo = -2 * p.delta + fam.x_shift(int(i0[0]), int(j0[0]))
    assert lo - 1e-12 <= x < lo + 4 * p.delta + 1e-12
    hits = 0
    for i in range(1, p.k + 1):
        for j in range(int(j0[0]) - 1, int(j0[0]) + 2):
            lo = -2 * p.delta + fam.x_shift(i, j)
            hits += lo <= x < lo + 4 * p.delta
    assert hits == 1


@given(st.floats(min_value=0, max_value=math.pi, allow_nan=False),
       st.floats(min_value=0, max_value=1, allow_nan=False),
       st.floats(min_value=-10, max_value=10, allow_nan=False))
def test_locate_matches_brute_membership(u, v, x):
    p = derive_scales(4)
    fam = region_family(p)
    got = fam.locate_support_cell(np.array([u, v, x, 0.0]))
    matches = []
    for i in range(1, p.k + 1):
        if not fam.R_nu[i - 1].contains(u, v):
            continue
        for j in range(-20, 21):
            iv = fam.I_ij(i, j)
            if iv.lo <= x < iv.hi:
                matches.append((i, j))
    assert len(matches) <= 1
    assert got == (matches[0] if matches else None)


@pytest.mark.parametrize("k", [8, 16])
def test_height_bands_disjoint_for_large_k(k):
    assert region_family(derive_scales(k)).y_band_overlaps() == []


@pytest.mark.parametrize("k", [2, 4])
def test_height_bands_overlap_for_small_k(k):
    # the bands [y_hat - eps, y_hat] of block 1 reach below height 1 when eps is large
    overlaps = region_family(derive_scales(k)).y_band_overlaps()
    assert (0, 1) in overlaps


def test_Q_nonempty_from_k3():
    for k in (3, 4, 8):
        p = derive_scales(k)
        q = region_family(p).Q
        assert q is not None
        assert q.area == pytest.approx((math.pi - 6 * p.delta) * (1 - 6 * p.delta))
