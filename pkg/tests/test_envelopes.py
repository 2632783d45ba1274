import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohesive_pf.envelopes import (EnvelopeTable, LaminationSettings, NonConvergentRecessionError, RayProbe,
                                   build_lamination_table, convex_envelope_1d, convex_envelope_grid,
                                   convex_envelope_values, lamination_envelope, lamination_tables,
                                   recession_numeric, recession_table)
from cohesive_pf.laws import MaterialLaw, h_eval, h_scal_conv, make_law

EUC22 = make_law("euclidean_squared", 1.0, 2, 2)
SO2 = make_law("dist_sq_SOn", 1.0, 2, 2)
ORACLE = os.path.join(os.path.dirname(__file__), "data", "lamination_gap_oracle.json")


def hconv_closed(xi, ell=1.0):
    return float(h_scal_conv(np.linalg.norm(xi), ell))


def rank_one(rng, norm):
    a, b = rng.normal(size=2), rng.normal(size=2)
    m = np.outer(a, b)
    return norm * m / np.linalg.norm(m)


def brute_hull(t, y, q):
    """O(n^2) lower envelope at q: best chord over all sample pairs straddling q."""
    best = np.interp(q, t, y)
    for i in range(t.size):
        for j in range(i + 1, t.size):
            if t[i] <= q <= t[j]:
                w = (q - t[i]) / (t[j] - t[i])
                best = min(best, (1 - w) * y[i] + w * y[j])
    return best


# -- 1D -------------------------------------------------------------------------------

def test_1d_examples():
    # spacing 1e-3 puts the tangent point ell/2 on a node, so the hull is exact
    tab = convex_envelope_1d({"name": "h_scal", "ell": 1.0}, 3.0, samples=4501)
    assert tab.query(0.4) == pytest.approx(0.16, abs=1e-12)
    assert tab.query(2.0) == pytest.approx(1.75, abs=1e-12)
    sq = convex_envelope_1d("square", 2.0, samples=257)
    t = np.linspace(0, 3.0, 1000)
    assert np.max(np.abs(sq.query(t) - t**2)) <= 1e-9


def test_1d_matches_bruteforce_chords(rng):
    t = np.linspace(0, 3, 61)
    y = np.sin(3 * t) + 0.3 * t**2
    tab = convex_envelope_1d(lambda s: np.interp(s, t, y), 2.0, samples=61, slope_at_infinity=None)
    for q in rng.uniform(0, 3, 30):
        assert tab.query(q) == pytest.approx(brute_hull(t, y, q), abs=1e-12)


def test_1d_errors():
    with pytest.raises(ValueError):
        convex_envelope_1d("square", 1.0, samples=8)
    with pytest.raises(ValueError):
        convex_envelope_1d(lambda t: np.where(t > 1, np.nan, t), 1.0)
    tab = convex_envelope_1d("square", 1.0, samples=65)
    with pytest.raises(ValueError):
        tab.query(1.6)


def test_idempotence_values():
    x = np.linspace(-2, 2, 41)
    for f in (x**2, np.abs(x) ** 0.5, np.cos(3 * x)):
        e1 = convex_envelope_values([x], f)
        assert np.max(np.abs(convex_envelope_values([x], e1) - e1)) <= 1e-9
    # product dual grids are exact only up to their spacing
    y = np.linspace(-1, 1, 31)
    X, Y = np.meshgrid(x, y, indexing="ij")
    convex = X**2 + 0.5 * np.abs(Y) + X * Y * 0.3
    errs = []
    for k in (1, 4):
        dual = [np.linspace(-4.5, 4.5, 41 * k), np.linspace(-1.3, 1.3, 31 * k)]
        env = convex_envelope_values([x, y], convex, dual_axes=dual)
        assert np.all(env <= convex + 1e-12)
        errs.append(np.max(convex - env))
    assert errs[1] < errs[0] and errs[1] < 1e-2


# -- grid --------------------------------------------------------------------------

def test_grid_examples():
    one = make_law("euclidean_squared", 1.0)
    tab = convex_envelope_grid(one, [-2, 2, 401])
    assert tab.query(0.75) == pytest.approx(0.5, abs=1e-12)
    assert tab.query(0.0) == 0.0
    row = make_law("euclidean_squared", 1.0, 1, 2)
    t2 = convex_envelope_grid(row, [-1.5, 1.5, 61])
    assert t2.query(np.array([[0.18, 0.24]])) == pytest.approx(0.09, abs=1e-12)
    assert t2.query(np.zeros((1, 2))) == 0.0


def test_grid_1x2_closed_form():
    """Relative error against the closed form shrinks with the dual lattice spacing."""
    ell = 1.0
    row = make_law("euclidean_squared", ell, 1, 2)
    errs = []
    for dual in (41, 161):
        tab = convex_envelope_grid(row, [-2, 2, 161], dual_count=dual)
        X, Y = np.meshgrid(*tab.axes(), indexing="ij")
        ref = h_scal_conv(np.hypot(X, Y), ell)
        inner = (slice(16, 145),) * 2
        errs.append(np.max(np.abs(tab.values[inner] - ref[inner]) / np.maximum(ref[inner], 1e-3)))
    assert errs[1] <= 5e-3 and errs[1] < errs[0]


def test_grid_2x2_bracket():
    """4D grid: bounded by h at the nodes and within the dual-spacing error of the closed form."""
    tab = convex_envelope_grid(EUC22, [-1.5, 1.5, 13])
    ax = tab.axes()[0]
    mesh = np.stack(np.meshgrid(*[ax] * 4, indexing="ij"), axis=-1).reshape(-1, 2, 2)
    h = h_eval(EUC22, mesh).reshape(tab.values.shape)
    assert np.all(tab.values <= h + 1e-12)
    ref = h_scal_conv(np.linalg.norm(mesh, axis=(1, 2)), 1.0).reshape(tab.values.shape)
    assert np.max(np.abs(tab.values - ref)) <= 0.15


def test_grid_size_limit():
    with pytest.raises(ValueError):
        convex_envelope_grid(EUC22, [-1, 1, 60])


# -- lamination -----------------------------------------------------------------------

def test_lamination_rank_one_value():
    xi = np.diag([2.0, 0.0])
    v = lamination_envelope(EUC22, xi, 3)
    assert v == pytest.approx(1.75, rel=0.02)


def test_lamination_small_xi_exact(rng):
    for _ in range(10):
        xi = rng.normal(size=(2, 2))
        xi *= rng.uniform(0, 0.5) / np.linalg.norm(xi)
        h = float(h_eval(EUC22, xi))
        assert lamination_envelope(EUC22, xi, 3) == pytest.approx(h, rel=1e-14, abs=1e-16)


def test_lamination_gap_positive():
    with open(ORACLE) as fh:
        g0 = json.load(fh)["g0"]
    val = lamination_envelope(EUC22, np.eye(2), 3)
    gap = val - hconv_closed(np.eye(2))
    assert gap > 0.1
    assert abs(gap - g0) <= 0.05 * g0


def test_lamination_depth_monotone(rng):
    for _ in range(10):
        xi = rng.normal(size=(2, 2)) * 1.5
        vals = [lamination_envelope(EUC22, xi, d) for d in range(4)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        vals = [lamination_envelope(SO2, xi, d) for d in range(3)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_table_invariants():
    tabs = lamination_tables(EUC22, 3)
    smax = LaminationSettings().resolve_smax(EUC22)
    s = np.linspace(-smax, smax, tabs[0].shape[0])
    A, B = np.meshgrid(s, s, indexing="ij")
    h = np.minimum(A**2 + B**2, np.hypot(A, B))
    hc = h_scal_conv(np.hypot(A, B), 1.0)
    tol = 1e-6 * (1 + h)
    prev = h
    for t in tabs:
        assert np.all(t <= prev + tol)
        assert np.all(t >= hc - 1e-3 * (1 + np.hypot(A, B)))
        assert np.all(np.isfinite(t)) and np.all(t >= 0)
        prev = t


def test_table_build_and_query(tmp_path):
    tab = build_lamination_table(EUC22, 2)
    assert tab.label == "lamination_depth_2"
    for ext in ("json", "npz"):
        p = tab.save(str(tmp_path / f"lam.{ext}"))
        back = EnvelopeTable.load(p)
        assert back.label == tab.label and back.grid_spec == tab.grid_spec
        np.testing.assert_array_equal(back.values, tab.values)
        xi = np.array([[0.9, 0.2], [-0.1, 1.1]])
        assert back.query(xi) == tab.query(xi)
    with pytest.raises(ValueError):
        tab.query(np.eye(2) * 10)


def test_generic_matches_fast_path():
    """The plain numpy recursion (custom law with the same density) against the compiled tables."""
    custom = MaterialLaw(ell=1.0, psi_kind="custom", m=2, n=2,
                         custom_psi=lambda x: np.sum(np.asarray(x) ** 2, axis=(-2, -1)), growth_const=1.0)
    for xi in (np.eye(2), np.diag([1.0, 0.5]), np.array([[0.8, 0.3], [0.1, -0.6]])):
        fast = lamination_envelope(EUC22, xi, 1, split_budget=64)
        slow = lamination_envelope(custom, xi, 1, split_budget=64)
        assert slow == pytest.approx(fast, rel=0.02)


def test_rank_one_agreement_row_law(rng):
    """1x2 matrices are all rank-one: lamination and the grid envelope agree."""
    row = make_law("euclidean_squared", 1.0, 1, 2)
    grid = convex_envelope_grid(row, [-3, 3, 241])
    for _ in range(50):
        d = rng.normal(size=2)
        xi = (d / np.linalg.norm(d) * rng.uniform(0.6, 2.5)).reshape(1, 2)
        lam = lamination_envelope(row, xi, 1, split_budget=64)
        g = grid.query(xi)
        assert abs(lam - g) <= 0.02 * g


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4))
def test_sandwich_property(entries):
    xi = np.array(entries).reshape(2, 2)
    r = np.linalg.norm(xi)
    tol = 1e-6 * (1 + r)
    v = lamination_envelope(EUC22, xi, 2)
    assert max(r - 0.25, 0.0) - tol <= v <= min(float(h_eval(EUC22, xi)), r) + tol


# -- recession -----------------------------------------------------------------------

def test_recession_examples(rng):
    for _ in range(5):
        d = rng.normal(size=(2, 2))
        d /= np.linalg.norm(d)
        assert recession_numeric(EUC22, RayProbe.default(d)) == pytest.approx(1.0, abs=0.01)
        assert recession_numeric(SO2, RayProbe.default(d)) == pytest.approx(1.0, rel=0.02)
    lin = recession_numeric(lambda t: 3.0 * t, RayProbe.default(np.ones(1)))
    assert lin == pytest.approx(3.0, rel=1e-12)


def test_recession_homogeneous(rng):
    d = rng.normal(size=(2, 2))
    d /= np.linalg.norm(d)
    probe = RayProbe.default(d)
    base = recession_numeric(EUC22, probe)
    for s in (0.5, 2.0):
        assert recession_numeric(EUC22, probe, scale=s) == pytest.approx(s * base, rel=0.01)


def test_recession_nonconvergent():
    with pytest.raises(NonConvergentRecessionError):
        recession_numeric(lambda t: t * np.log(t), RayProbe.default(np.ones(1), r_min=10.0))


def test_recession_of_table():
    tab = convex_envelope_1d({"name": "h_scal", "ell": 2.0}, 2e4, samples=20001)
    probe = RayProbe(np.ones(1), tuple(np.logspace(0, 4, 17)))
    assert recession_numeric(tab, probe) == pytest.approx(2.0, rel=1e-3)
    rt = recession_table(EUC22, [np.eye(2) / np.sqrt(2)], np.logspace(0, 3, 13))
    assert rt.meta["slopes"][0] == pytest.approx(1.0, rel=1e-3)
    assert rt.query(np.eye(2).ravel() / np.sqrt(2) * 10) == pytest.approx(10 - 0.0, rel=1e-2)


def test_probe_validation():
    with pytest.raises(ValueError):
        RayProbe(np.array([1.0, 1.0]), (1, 10, 100))
    with pytest.raises(ValueError):
        RayProbe(np.array([1.0]), (1, 2, 5))
    with pytest.raises(ValueError):
        RayProbe(np.array([1.0]), (1, 100, 10))
