import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectionflow.geometry import derive_scales, region_family
from sectionflow.hamiltonians import (
    OMEGA,
    PhasePoint,
    build_F,
    build_G,
    build_section3_H,
    energy_norm,
    kernel_field,
    standard_cutoffs,
    stratified_grid,
    vector_field,
    zero_hamiltonian,
)


def _all_hamiltonians(p):
    out = [build_section3_H(p), build_F(p)]
    out += [build_G(p, i) for i in range(1, p.k + 1)]
    return out


def _support_points(H, rng, n):
    box = []
    for lo, hi in H.support:
        if not (np.isfinite(lo) or np.isfinite(hi)):
            lo, hi = -1.0, 1.0
        lo = hi - 2.0 if not np.isfinite(lo) else lo
        hi = lo + 2.0 if not np.isfinite(hi) else hi
        box.append((lo, hi))
    return np.stack([rng.uniform(lo, hi, n) for lo, hi in box], axis=1)


def test_phase_point_round_trip_and_finiteness():
    z = PhasePoint(1.0, 2.0, 3.0, 4.0)
    assert PhasePoint.from_array(z.as_array()) == z
    with pytest.raises(ValueError):
        PhasePoint(float("nan"), 0.0, 0.0, 0.0)


def test_section3_values_k2():
    p = derive_scales(2)
    H = build_section3_H(p)
    assert H(np.array([math.pi / 4, 0.5, 1.0, 0.0])) == pytest.approx(-2.570796, abs=1e-6)
    assert H(np.array([-0.5, 0.5, 1.0, 0.0])) == 0.0
    z2 = np.array([math.pi / 4 + p.eps, 0.5, 1.0, 0.0])
    # oracle: sum of the two block terms evaluated separately
    cut = standard_cutoffs(p)
    terms = [-i * cut.f1(z2[0] - (i - 1) * p.eps) * cut.f2(z2[1]) * (1 + p.eps) * z2[2] for i in (1, 2)]
    assert H(z2) == pytest.approx(sum(terms), rel=1e-15)
    assert H(z2) == pytest.approx(-5.141593, abs=1e-6)


def test_section3_field_on_plateau():
    p = derive_scales(2)
    fam = region_family(p)
    H = build_section3_H(p)
    for i in (1, 2):
        cu, cv = fam.R2[i - 1].center
        X = vector_field(H, np.array([cu, cv, 0.7, 0.2]))
        assert list(X) == pytest.approx([0.0, 0.0, 0.0, i * (1 + p.eps)], abs=0)


def test_section3_field_has_no_x_component(rng):
    p = derive_scales(4)
    H = build_section3_H(p)
    Z = np.stack([rng.uniform(-0.5, 3.7, 500), rng.uniform(-0.5, 1.5, 500),
                  rng.uniform(-5, 5, 500), rng.uniform(-5, 5, 500)], axis=1)
    assert np.all(vector_field(H, Z)[:, 2] == 0.0)


def test_F_values_k2():
    p = derive_scales(2)
    F = build_F(p)
    fam = region_family(p)
    assert fam.I2.contains(math.pi / 4)
    z = np.array([math.pi / 4, 0.5, math.pi / 4, 0.0])
    assert F(z) == pytest.approx(-(1 + math.pi / 2) * (math.pi / 4), rel=1e-15)
    assert F(z) == pytest.approx(-2.019, abs=1e-3)
    assert F(np.array([math.pi / 4, 0.5, -0.1, 0.0])) == 0.0


def test_F_field_in_inner_rectangle(rng):
    p = derive_scales(4)
    fam = region_family(p)
    F = build_F(p)
    r2 = fam.R2[0]
    n = 300
    Z = np.stack([rng.uniform(r2.umin, r2.umax, n), rng.uniform(r2.vmin, r2.vmax, n),
                  rng.uniform(-0.2, p.eps + 0.2, n), rng.uniform(-3, 3, n)], axis=1)
    X = vector_field(F, Z)
    assert np.all(X[:, :3] == 0.0)
    f3, df3 = standard_cutoffs(p).f3.evaluate(Z[:, 2], with_deriv=True)
    assert np.allclose(X[:, 3], (1 + p.eps) * (df3 * Z[:, 2] + f3), rtol=1e-14, atol=0)


def test_G_values_k2():
    p = derive_scales(2)
    fam = region_family(p)
    G = build_G(p, 1)
    yc = fam.y_check[0]
    z = np.array([math.pi / 4, 0.5, math.pi / 4, yc + p.delta])
    assert G(z) == pytest.approx(-(1 - math.pi / 2) * (math.pi / 4), rel=1e-15)
    assert G(z) == pytest.approx(0.448, abs=1e-3)
    assert vector_field(G, z)[3] == pytest.approx(1 - math.pi / 2, rel=1e-14)
    below = z.copy()
    below[3] = yc - 0.01
    assert G(below) == 0.0
    assert np.all(vector_field(G, below) == 0.0)


@pytest.mark.parametrize("bad", [0, 3, -1])
def test_G_rejects_block_index(bad):
    with pytest.raises(ValueError):
        build_G(derive_scales(2), bad)


@pytest.mark.parametrize("k", [2, 4])
def test_G_field_has_no_uv_component_on_R1(k, rng):
    p = derive_scales(k)
    fam = region_family(p)
    r1 = fam.R1[0]
    n = 300
    Z = np.stack([rng.uniform(r1.umin, r1.umax, n), rng.uniform(r1.vmin, r1.vmax, n),
                  rng.uniform(0, p.eps, n), rng.uniform(0, 3, n)], axis=1)
    for i in range(1, k + 1):
        X = vector_field(build_G(p, i), Z)
        assert np.all(X[:, :2] == 0.0)


@pytest.mark.parametrize("k", [2, 4])
def test_gradients_match_finite_differences(k):
    p = derive_scales(k)
    rng = np.random.default_rng(k)
    for H in _all_hamiltonians(p):
        Z = _support_points(H, rng, 1000)
        g = H.grad(Z)
        for m in range(4):
            hstep = 1e-7
            Zp, Zm = Z.copy(), Z.copy()
            Zp[:, m] += hstep
            Zm[:, m] -= hstep
            fd = (H(Zp) - H(Zm)) / (2 * hstep)
            err = np.abs(fd - g[:, m])
            scale = np.abs(g[:, m])
            small = scale < 1e-3
            assert np.all(err[~small] / scale[~small] < 1e-5), (H.name, m)
            assert np.all(err[small] < 1e-6), (H.name, m)


@pytest.mark.parametrize("k", [2, 4])
def test_zero_outside_declared_support(k, rng):
    p = derive_scales(k)
    for H in _all_hamiltonians(p):
        Z = rng.uniform(-2, 5, size=(2000, 4))
        out = ~H.in_support(Z)
        assert np.all(H(Z[out]) == 0.0), H.name
        assert np.all(H.grad(Z[out]) == 0.0), H.name


@pytest.mark.parametrize("k", [2, 4])
def test_kernel_field_equals_analytic_field(k, rng):
    p = derive_scales(k)
    for H in _all_hamiltonians(p):
        Z = _support_points(H, rng, 500)
        assert np.allclose(kernel_field(H, Z), vector_field(H, Z), rtol=1e-13, atol=1e-13), H.name


@given(st.lists(st.floats(min_value=-3, max_value=4, allow_nan=False), min_size=4, max_size=4))
@settings(max_examples=200)
def test_field_is_symplectic_gradient(z):
    # omega(X_H, w) = dH(w) for every w, i.e. OMEGA^T X = grad H
    p = derive_scales(3)
    z = np.array(z)
    for H in (build_section3_H(p), build_F(p), build_G(p, 2)):
        X = vector_field(H, z)
        assert np.allclose(OMEGA.T @ X, H.grad(z), rtol=1e-14, atol=1e-14)


def test_energy_of_zero_hamiltonian():
    assert energy_norm(zero_hamiltonian()) == 0.0


@pytest.mark.parametrize("k", [2, 4, 8])
def test_energy_of_F_within_bound(k):
    p = derive_scales(k)
    F = build_F(p)
    e = energy_norm(F, n=32)
    assert e <= F.energy_bound
    assert F.energy_bound == pytest.approx((1 + p.eps) * (p.eps - p.delta))
    assert e <= 2 * p.eps


def test_energy_F_k4_claimed_bound():
    p = derive_scales(4)
    e = energy_norm(build_F(p), n=32)
    assert e <= (1 + math.pi / 4) * (math.pi / 4 - math.pi / 64)
    assert e <= math.pi / 2


def test_energy_G1_k2_against_dense_oracle():
    p = derive_scales(2)
    G = build_G(p, 1)
    c = abs(2 - 1 - p.eps)
    # G = |c| g1 g2 g3 g4 x on x >= 0; g1, g2, g4 reach 1, so the range is [0, |c| max g3(x) x]
    x = np.linspace(0, p.eps, 200001)
    oracle = c * float(np.max(standard_cutoffs(p).g3(x) * x))
    e = energy_norm(G, n=32)
    assert e <= oracle + 1e-12
    assert e == pytest.approx(oracle, rel=0.05)
    assert e <= c * p.eps


def test_stratified_grid_shape():
    box = ((0.0, 1.0), (0.0, 2.0), (5.0, 6.0), (0.0, 1.0))
    Z = stratified_grid(box, (0, 1), 4)
    assert Z.shape == (16, 4)
    assert np.all(Z[:, 2] == 5.0)
    assert sorted(set(Z[:, 0])) == pytest.approx([0.125, 0.375, 0.625, 0.875])
    with pytest.raises(ValueError):
        energy_norm(zero_hamiltonian(), n=0)
