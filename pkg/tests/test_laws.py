import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohesive_pf.laws import (DimensionError, MaterialLaw, NonConvergentRecessionError, f_damage, f_eps,
                              gamma_eps, h_eval, h_scal_conv, make_law, phi_map, psi_eval, psi_infty_eval)

EUC22 = make_law("euclidean_squared", 1.0, 2, 2)
SO2 = make_law("dist_sq_SOn", 1.0, 2, 2)
SO3 = make_law("dist_sq_SOn", 0.7, 3, 3)


def rot2(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def brute_dist_sq_so2(xi, k=200001):
    th = np.linspace(0, 2 * np.pi, k)
    c, s = np.cos(th), np.sin(th)
    d = (xi[0, 0] - c) ** 2 + (xi[0, 1] + s) ** 2 + (xi[1, 0] - s) ** 2 + (xi[1, 1] - c) ** 2
    return d.min()


# -- construction --------------------------------------------------------------

def test_law_validation():
    with pytest.raises(ValueError):
        MaterialLaw(ell=0.0)
    with pytest.raises(ValueError):
        make_law("dist_sq_SOn", 1.0, 2, 3)
    with pytest.raises(ValueError):
        make_law("dist_sq_SOn", 1.0, 4, 4)


def test_law_roundtrip():
    for law in (EUC22, SO2, SO3):
        assert MaterialLaw.from_dict(law.to_dict()) == law


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        psi_eval(EUC22, np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        h_eval(SO2, np.zeros(3))


# -- psi -------------------------------------------------------------------------

def test_psi_examples():
    assert psi_eval(EUC22, np.zeros((2, 2))) == 0.0
    assert psi_eval(SO2, np.eye(2)) == pytest.approx(0.0, abs=1e-14)
    assert psi_eval(SO2, 2 * np.eye(2)) == pytest.approx(2.0, abs=1e-12)
    # oracle: angular scan of SO(2)
    assert brute_dist_sq_so2(2 * np.eye(2)) == pytest.approx(2.0, abs=1e-9)


def test_so2_matches_angular_scan(rng):
    for _ in range(20):
        xi = rng.normal(size=(2, 2)) * 2
        assert psi_eval(SO2, xi) == pytest.approx(brute_dist_sq_so2(xi), abs=1e-8)


def test_so3_reflection_sign():
    # diag(1, 1, -1) is at squared distance 4 from SO(3) (nearest rotation flips two signs? no: one sign)
    xi = np.diag([1.0, 1.0, -1.0])
    # signed svals (1, 1, -1): |xi|^2 + 3 - 2*(1 + 1 - 1) = 4
    assert psi_eval(SO3, xi) == pytest.approx(4.0, abs=1e-12)


def test_rotation_invariance(rng):
    for _ in range(50):
        xi = rng.normal(size=(2, 2))
        R = rot2(rng.uniform(0, 2 * np.pi))
        assert abs(psi_eval(SO2, R @ xi) - psi_eval(SO2, xi)) <= 1e-10
        assert abs(psi_eval(SO2, xi @ R) - psi_eval(SO2, xi)) <= 1e-10


def test_psi_infty_examples():
    xi = np.array([[0.3, -1.2], [0.5, 2.0]])
    assert psi_infty_eval(EUC22, xi) == pytest.approx(np.sum(xi**2), rel=1e-14)
    assert psi_infty_eval(SO2, np.eye(2)) == pytest.approx(2.0, rel=1e-14)
    # oracle: Psi(t Id)/t^2 at large t
    for t in (1e3, 1e4):
        assert psi_eval(SO2, t * np.eye(2)) / t**2 == pytest.approx(2.0, rel=2e-3)
    for law in (EUC22, SO2):
        assert psi_infty_eval(law, np.zeros((2, 2))) == 0.0


def _quartic(xi):
    return np.sum(np.asarray(xi) ** 2, axis=(-2, -1)) ** 2


def _soft(xi):
    return 3.0 * np.sum(np.asarray(xi) ** 2, axis=(-2, -1)) + np.sqrt(1 + np.sum(np.asarray(xi) ** 2, axis=(-2, -1)))


def test_custom_recession():
    good = MaterialLaw(ell=1.0, psi_kind="custom", m=1, n=2, custom_psi=_soft, growth_const=5.0)
    assert psi_infty_eval(good, np.array([[0.6, 0.8]])) == pytest.approx(3.0, rel=1e-3)
    bad = MaterialLaw(ell=1.0, psi_kind="custom", m=1, n=2, custom_psi=_quartic, growth_const=5.0)
    with pytest.raises(NonConvergentRecessionError):
        psi_infty_eval(bad, np.array([[0.6, 0.8]]))


def test_custom_by_reference():
    law = make_law("custom:tests.test_laws:_soft", 1.0, 1, 2, growth_const=5.0)
    assert psi_eval(law, np.array([[0.0, 0.0]])) == pytest.approx(1.0)


# -- h -------------------------------------------------------------------------------

def test_h_examples():
    one = make_law("euclidean_squared", 1.0)
    assert h_eval(one, 2.0) == 2.0
    assert h_eval(one, 0.5) == 0.25
    assert h_eval(SO2, rot2(0.3)) == pytest.approx(0.0, abs=1e-14)


def test_h_bounds_random(rng):
    for law in (EUC22, SO2):
        xi = rng.normal(size=(10_000, 2, 2)) * rng.uniform(0, 4, size=(10_000, 1, 1))
        h = h_eval(law, xi)
        p = psi_eval(law, xi)
        assert np.all(h <= p + 1e-15)
        assert np.all(h <= law.ell * np.sqrt(p) + 1e-15)


def test_growth_sandwich(rng):
    for law in (EUC22, SO2, SO3):
        shape = law.shape
        xi = rng.normal(size=(5000,) + shape) * rng.uniform(0, 10, size=(5000, 1, 1))
        nrm = np.sqrt(np.sum(xi**2, axis=(1, 2)))
        c = law.h_growth_const
        h = h_eval(law, xi)
        assert np.all(np.maximum(nrm / c - c, 0) <= h + 1e-12)
        assert np.all(h <= c * (nrm + 1))
        # growth condition on Psi with the declared constant
        cg = law.growth_const
        p = psi_eval(law, xi)
        assert np.all(nrm**2 / cg - cg <= p + 1e-12) and np.all(p <= cg * (nrm**2 + 1))


def test_h_vs_hconv_scalar():
    ell = 1.3
    law = make_law("euclidean_squared", ell)
    t = np.linspace(0, 3 * ell, 3001)
    h = h_eval(law, t)
    hc = h_scal_conv(t, ell)
    assert np.all(h >= hc - 1e-15)
    eq = np.isclose(h, hc, rtol=0, atol=1e-13)
    assert np.array_equal(eq, t <= ell / 2 + 1e-12)
    # on the linear branch h = ell t sits a constant ell^2/4 above the envelope
    lin = t >= ell
    assert np.allclose(h[lin] - hc[lin], ell**2 / 4, rtol=0, atol=1e-12)


# -- damage functions -------------------------------------------------------------

def test_f_damage():
    assert f_damage(0.0, 1.0) == 0.0
    assert f_damage(0.5, 1.0) == 1.0
    assert f_damage(1 / 3, 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        f_damage(1.0, 1.0)


def test_f_eps():
    assert f_eps(0.0, 0.1, 1.0) == 0.0
    assert f_eps(1.0, 0.1, 1.0) == 1.0
    assert f_eps(0.5, 0.01, 1.0) == pytest.approx(0.1)


def test_gamma_eps():
    assert gamma_eps(0.04, 1.0) == pytest.approx(1 / 1.2)
    assert gamma_eps(0.25, 2.0) == pytest.approx(0.5)
    vals = [gamma_eps(e, 1.0) for e in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] < 1


@settings(max_examples=200, deadline=None)
@given(s=st.floats(0, 0.999999), eps=st.floats(1e-8, 10), ell=st.floats(0.05, 20))
def test_f_eps_formula(s, eps, ell):
    assert f_eps(s, eps, ell) == min(1.0, np.sqrt(eps) * f_damage(s, ell))


@settings(max_examples=200, deadline=None)
@given(eps=st.floats(1e-6, 10), ell=st.floats(0.05, 20), frac=st.floats(0, 0.999))
def test_gamma_eps_threshold(eps, ell, frac):
    # rounding in 1 - gamma is amplified by 1/(ell sqrt(eps)); the sampled range keeps that below 1e-12
    g = gamma_eps(eps, ell)
    if ell * np.sqrt(eps) >= 1e-3:
        assert abs(f_eps(g, eps, ell) - 1) <= 1e-12
    else:
        assert abs(f_eps(g, eps, ell) - 1) <= 1e-15 / (ell * np.sqrt(eps))
    assert f_eps(frac * g, eps, ell) < 1


def test_h_scal_conv_and_phi():
    assert h_scal_conv(1.0, 2.0) == 1.0
    assert h_scal_conv(2.0, 2.0) == 3.0
    assert h_scal_conv(0.0, 2.0) == 0.0
    assert phi_map(0.0) == 0.0 and phi_map(1.0) == 0.5 and phi_map(0.5) == 0.375
    t = np.linspace(0, 1, 101)
    assert np.all(np.diff(phi_map(t)) > 0)
    with pytest.raises(ValueError):
        phi_map(1.5)
