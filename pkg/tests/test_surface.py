import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohesive_pf.laws import MaterialLaw, make_law
from cohesive_pf.surface import (SurfaceDensityCurve, UnsupportedLawError, competitor_upper_bound,
                                 gscal_cell, gscal_curve, g_vectorial, nodes_for, sliced_cell)


def tent_oracle(t, ell, T, nb=400, nw=400):
    """Best tent-shaped damage profile (depth b, half-width w) with the exact alpha.

    Closed form per (b, w): elastic t^2 ell^2 (1-b) / (2 w (1/b + 2 ln b - b)),
    local (1-b)^2 w / 6, gradient 2 (1-b)^2 / w.
    """
    b = np.linspace(1e-4, 1 - 1e-4, nb)[:, None]
    w = np.linspace(1e-2, T / 2, nw)[None, :]
    el = t**2 * ell**2 * (1 - b) / (2 * w * (1 / b + 2 * np.log(b) - b))
    E = el + (1 - b) ** 2 * w / 6 + 2 * (1 - b) ** 2 / w
    return float(min(E.min(), t * 0 + np.inf if t > 0 else 0.0))


# -- cell problems -----------------------------------------------------------

def test_cell_zero():
    p = gscal_cell(0.0, 1.0, 16, 1024)
    assert p.energy == 0.0
    assert np.all(p.alpha == 0) and np.all(p.beta == 1)


@pytest.mark.xfail(strict=True, reason="crack-core discretisation puts the N=1024 cell 0.44% above the cap")
def test_cell_large_amplitude_literal():
    p = gscal_cell(10.0, 1.0, 16, 1024)
    assert 0 < p.energy <= 1.0


def test_cell_large_amplitude_refinement():
    """The excess over the brittle cap is a mesh effect: it shrinks as the spacing drops."""
    e = [gscal_cell(10.0, 1.0, 16, N).energy for N in (1024, 2049, 4097)]
    assert all(v > 0 for v in e)
    assert e[0] - 1 < 5e-3
    assert e[2] < e[1] < e[0]


def test_cell_small_amplitude_against_tent_oracle():
    t = 0.05
    p = gscal_cell(t, 1.0, 16, 1024)
    assert 0.9 <= p.energy / t <= 1.0
    assert p.energy <= tent_oracle(t, 1.0, 16) * (1 + 1e-3)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_cell_below_tent_oracle(t):
    p = gscal_cell(t, 1.0, 16, 2049)
    assert p.energy <= tent_oracle(t, 1.0, 16) * (1 + 1e-3)
    assert p.energy <= competitor_upper_bound(t, 1.0, 1.0)


def test_cell_profile_invariants():
    p = gscal_cell(0.7, 1.3, 8, 513)
    assert p.alpha[0] == 0.0 and p.alpha[-1] == 0.7
    assert p.beta[0] == 1.0 and p.beta[-1] == 1.0
    assert np.all((p.beta >= 0) & (p.beta <= 1))
    assert abs(p.recompute_energy() - p.energy) <= 1e-12 * max(1, p.energy)
    assert all(b <= a for a, b in zip(p.trace, p.trace[1:]))
    d = p.definitional_value()
    assert d <= p.energy * (1 + 1e-9)


def test_definitional_cross_check():
    """The definitional form never exceeds the cell energy and meets it as T grows."""
    ratios = []
    for T, N in ((8, 513), (16, 1025), (32, 2049)):
        p = gscal_cell(0.7, 1.3, T, N)
        ratios.append(p.definitional_value() / p.energy)
    assert all(r <= 1 + 1e-12 for r in ratios)
    assert ratios[0] < ratios[1] < ratios[2]
    assert ratios[1] >= 0.99 and ratios[2] >= 0.9999


def test_cell_symmetry():
    p = gscal_cell(0.8, 1.0, 16, 1025)
    assert np.max(np.abs(p.beta - p.beta[::-1])) <= 1e-4


def test_cell_validation():
    with pytest.raises(ValueError):
        gscal_cell(0.1, 1.0, T=3, N=128)
    with pytest.raises(ValueError):
        gscal_cell(0.1, 1.0, T=8, N=32)
    with pytest.raises(ValueError):
        gscal_cell(-0.1, 1.0)


def test_monotone_in_T():
    for t in (0.05, 0.5, 2.0):
        g16 = gscal_cell(t, 1.0, 16, nodes_for(16, 64)).energy
        g32 = gscal_cell(t, 1.0, 32, nodes_for(32, 64)).energy
        assert g32 <= g16 + 1e-9


def test_competitor_bound():
    assert competitor_upper_bound(0.0, 1.0, 1.0) == 0.0
    assert competitor_upper_bound(0.1, 1.0, 1.0) == pytest.approx(0.35)
    assert competitor_upper_bound(1.0, 1.0, 1.0) == 3.0
    assert competitor_upper_bound(5.0, 2.0, 7.0) == 3.0


# -- curves ----------------------------------------------------------------------

def test_curve_zero_amplitude():
    c = gscal_curve(1.0, [0.0], T_ladder=(8, 16), nodes_per_unit=16)
    assert c.g_values.tolist() == [0.0]
    with pytest.raises(ValueError):
        gscal_curve(1.0, [0.1], T_ladder=(16,))


def test_curve_properties(curve):
    assert curve(0.5) <= min(1.0, 0.5) * 1.02
    assert curve(0.6) <= 2 * curve(0.3) * 1.02
    inv = curve.check_invariants()
    assert inv["bound"] and inv["subadditive"] and inv["zero"]
    # coercivity band with C = 2
    a, g = curve.amplitudes, curve.g_values
    assert np.all(np.minimum(a, 1) / 2 <= g) and np.all(g <= 2 * np.minimum(a, 1))
    assert curve(0.0) == 0.0
    with pytest.raises(ValueError):
        curve(curve.t_max * 1.01)
    for m in curve.extrapolation_meta:
        assert m["g_T"]["32"] <= m["g_T"]["16"] + 1e-9


def test_curve_roundtrip(curve, tmp_path):
    path = curve.save(str(tmp_path / "c.json"))
    back = SurfaceDensityCurve.load(path)
    np.testing.assert_array_equal(back.g_values, curve.g_values)
    np.testing.assert_array_equal(back.amplitudes, curve.amplitudes)
    assert back.extrapolation_meta == curve.extrapolation_meta and back.T_used == curve.T_used


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 5.0), st.floats(0, 5.0))
def test_curve_subadditive_property(curve, a, b):
    if a + b <= curve.t_max:
        assert curve(a + b) <= (curve(a) + curve(b)) * 1.02 + 1e-12


# -- vectorial -----------------------------------------------------------------------

def test_vectorial_euclidean(curve):
    law = make_law("euclidean_squared", 1.0, 2, 2)
    nus = [np.array([1.0, 0.0]), np.array([0.6, 0.8]), np.array([0.0, -1.0])]
    vals = [g_vectorial(np.array([0.3, 0.4]), nu, law, curve) for nu in nus]
    assert len(set(vals)) == 1
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert g_vectorial(R @ np.array([0.3, 0.4]), nus[1], law, curve) == vals[0]
    assert g_vectorial(np.zeros(2), nus[1], law, curve) == 0.0
    with pytest.raises(ValueError):
        g_vectorial(np.array([0.3, 0.4]), np.array([1.0, 1.0]), law, curve)


def _aniso(xi):
    xi = np.asarray(xi)
    return xi[..., 0, 0] ** 2 + 2.0 * xi[..., 0, 1] ** 2


def test_sliced_anisotropic_scaling():
    """Psi_inf(a (x) nu) = k a^2 rescales alpha: g(z, nu) = g_scal(sqrt(k) |z|)."""
    law = MaterialLaw(ell=1.0, psi_kind="custom", m=1, n=2, custom_psi=_aniso, growth_const=3.0, sliceable=True)
    nu = np.array([0.6, 0.8])
    k = nu[0] ** 2 + 2 * nu[1] ** 2
    z = 0.4
    sl = sliced_cell(np.array([z]), nu, law, T=16, N=1025).energy
    ref = gscal_cell(np.sqrt(k) * z, 1.0, 16, 1025).energy
    assert sl == pytest.approx(ref, rel=1e-6)


def test_vectorial_unsupported(curve):
    law = MaterialLaw(ell=1.0, psi_kind="custom", m=1, n=2, custom_psi=_aniso, growth_const=3.0)
    with pytest.raises(UnsupportedLawError):
        g_vectorial(np.array([0.3]), np.array([1.0, 0.0]), law, curve)
