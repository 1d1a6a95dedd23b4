"""One pass/fail check per acceptance criterion, with pinned tolerances."""

import math
import time

import numpy as np
import pytest

from zrpeq import canonical, grand_canonical as gc, legendre, simulator
from zrpeq.expression import expression_weight
from zrpeq.grand_canonical import ChemicalPotential, Membership
from zrpeq.legendre import Phase
from zrpeq.simulator import SimParams
from zrpeq.weights import builtin


def _tv(emp, exact):
    keys = set(emp) | set(exact)
    return 0.5 * sum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)


def test_01_table_matches_enumeration():
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("evans-hanney", "slowed-free"):
        w = builtin(name, b=4)
        for L in (2, 3, 4):
            table = canonical.build_table(w, L, (5, 5))
            for n1 in range(6):
                for n2 in range(6):
                    ref = canonical.brute_force_Z(w, L, (n1, n2))
                    # relative error of Z itself
                    worst = max(worst, abs(math.expm1(table.log_z(L, (n1, n2)) - ref)))
    assert worst < 1e-12
    assert time.perf_counter() - t0 < 60


def test_02_duality_round_trip():
    w = builtin("evans-hanney", b=4)
    t0 = time.perf_counter()
    grid = [(a, b) for a in np.linspace(-3.0, -0.3, 10) for b in np.linspace(-3.0, -0.3, 5)]
    assert len(grid) == 50
    worst = 0.0
    for mu in grid:
        st = gc.evaluate(w, ChemicalPotential(*mu))
        assert st.membership == Membership.INTERIOR
        sol = legendre.solve(w, st.R)
        worst = max(worst, float(np.max(np.abs(sol.mbar.as_array() - np.array(mu)))))
    assert worst < 1e-6
    assert time.perf_counter() - t0 < 60


def test_03_slowed_free_closed_forms():
    w = builtin("slowed-free", b=4)
    t0 = time.perf_counter()
    st = gc.evaluate(w, ChemicalPotential(-1.0, 0.0))
    assert st.R[0] == pytest.approx(0.5, abs=1e-3)
    assert time.perf_counter() - t0 < 10
    t0 = time.perf_counter()
    sol = legendre.solve(w, (2.0, 3.0))
    np.testing.assert_allclose(sol.rc, [0.5, 1.5], atol=1e-3)
    np.testing.assert_allclose(sol.mbar.as_array(), [-1.0, 0.0], atol=1e-3)
    assert time.perf_counter() - t0 < 10


@pytest.mark.parametrize("b,inside", [(4, {(0.0, 0.0): True, (0.0, -0.5): True}),
                                      (2.5, {(0.0, 0.0): False, (0.0, -0.5): True}),
                                      (2, {(0.0, 0.0): False, (0.0, -0.5): False})])
def test_04_domain_classification(b, inside):
    w = builtin("evans-hanney", b=b)
    for mu, expect in inside.items():
        m = gc.evaluate(w, ChemicalPotential(*mu), strict=False).membership
        assert m.in_domain is expect
        assert m.on_boundary


def test_05_equivalence_of_ensembles():
    w = builtin("evans-hanney", b=4)
    t0 = time.perf_counter()
    rows = canonical.equivalence_scan(w, (0.2, 0.3), [8, 16, 32, 64])
    h = np.array([r.h for r in rows])
    res = np.array([r.residual for r in rows])
    assert np.all(np.diff(h) < 0)
    assert h[-1] < h[0] / 3
    assert np.all(np.diff(res) < 0)
    assert time.perf_counter() - t0 < 300


def test_06_condensed_equivalence():
    w = builtin("single-species", b=5)
    sol = legendre.solve(w, (1.0, 0.0))
    assert sol.rc[0] == pytest.approx(1 / 3, abs=1e-6)
    assert sol.phase == Phase.CONDENSED1
    rows = canonical.equivalence_scan(w, (1.0, 0.0), [16, 32, 64], solution=sol)
    assert np.all(np.diff([r.h for r in rows]) < 0)


@pytest.mark.parametrize("p", ["sym", "asym:1.0"])
def test_07_simulator_stationarity(p):
    w = builtin("evans-hanney", b=4)
    exact = canonical.canonical_distribution(w, 3, (2, 2))
    t0 = time.perf_counter()
    res = simulator.run(w, SimParams(3, (2, 2), p1=p, p2=p, events=1_000_000, seed=17, track_states=True))
    assert _tv(res.state_distribution(), exact) < 0.05
    assert time.perf_counter() - t0 < 120


def test_08_max_occupation_lln():
    w = builtin("single-species", b=5)
    t0 = time.perf_counter()
    stats = simulator.max_occupation_stats(
        w, SimParams(100, (100, 0), events=15_000_000, burn_in=0.5, seed=2024), replicas=40)
    assert abs(stats.mean_fraction - 2 / 3) < 0.15
    assert stats.chi2_pvalue > 0.01
    assert time.perf_counter() - t0 < 300


def test_09_tail_rates():
    w = builtin("slowed-free", b=4)
    e2 = math.exp(2.0)
    mu = ChemicalPotential(-e2, 2.0)
    assert gc.evaluate(w, mu).membership == Membership.BOUNDARY_IN
    cone = legendre.subgradient_cone(w, mu)
    normal = cone.normals[0]
    np.testing.assert_allclose(normal, np.array([1.0, e2]) / math.hypot(1.0, e2), atol=1e-6)
    assert gc.tail_rate(w, mu, normal, [200])[0] < 0.05
    for d in [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]:
        assert gc.tail_rate(w, mu, d, [200])[0] > 0.1


class TestInvariance:
    """Criterion 10."""

    def test_gauge(self):
        w = builtin("slowed-free", b=4)
        c = 0.37
        g = expression_weight(f"exp({c}) * factorial(k1) / pochhammer(5, k1) * (k1 + 1)^k2 / factorial(k2)")
        L, N, mu = 4, (3, 2), (-1.5, -0.8)
        ta, tb = canonical.build_table(w, L, N), canonical.build_table(g, L, N)
        np.testing.assert_allclose(canonical.marginal_table(ta, L, N), canonical.marginal_table(tb, L, N),
                                   rtol=1e-12, atol=1e-15)
        ha = canonical.specific_relative_entropy(ta, w, L, N, mu)
        hb = canonical.specific_relative_entropy(tb, g, L, N, mu)
        assert abs(ha - hb) < 1e-12

    def test_tilt(self):
        w = builtin("evans-hanney", b=4)
        theta = np.array([0.4, -0.25])
        g = expression_weight(f"factorial(k1) / pochhammer(5, k1) * ((k1 + 1) / (k1 + 2))^k2"
                              f" * exp({theta[0]} * k1 + {theta[1]} * k2)")
        L, N, mu = 4, (3, 3), np.array([-1.0, -1.3])
        ta, tb = canonical.build_table(w, L, N), canonical.build_table(g, L, N)
        np.testing.assert_allclose(canonical.marginal_table(ta, L, N), canonical.marginal_table(tb, L, N),
                                   rtol=1e-12, atol=1e-15)
        ha = canonical.specific_relative_entropy(ta, w, L, N, mu, tol=1e-14)
        hb = canonical.specific_relative_entropy(tb, g, L, N, mu - theta, tol=1e-14)
        assert abs(ha - hb) < 1e-12

    @pytest.mark.parametrize("name,mu", [("evans-hanney", (-0.7, -1.1)), ("slowed-free", (-2.0, -0.6))])
    def test_covariance_is_jacobian(self, name, mu):
        w = builtin(name, b=4)
        mu = np.array(mu)
        st = gc.evaluate(w, ChemicalPotential(*mu), tol=1e-13)
        h = 1e-5
        jac = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            up = gc.evaluate(w, ChemicalPotential(*(mu + e)), tol=1e-13).R
            dn = gc.evaluate(w, ChemicalPotential(*(mu - e)), tol=1e-13).R
            jac[:, j] = (up - dn) / (2 * h)
        assert np.max(np.abs(jac - st.covariance)) < 1e-5

    @pytest.mark.parametrize("mu", [(-1.0, 0.0), (-0.3, 0.0)])
    def test_ray_constancy(self, mu):
        w = builtin("evans-hanney", b=4)
        cone = legendre.subgradient_cone(w, mu)
        for lam in (0.1, 1.0, 10.0):
            sol = legendre.solve(w, cone.ray([lam]))
            np.testing.assert_allclose(sol.mbar.as_array(), mu, atol=1e-6)
            np.testing.assert_allclose(sol.rc, cone.rc, atol=1e-6)


class TestCorner:
    """Criterion 11."""

    def test_corner_detected(self):
        w = builtin("symmetrized", b=4)
        db = gc.domain_boundary(w, np.linspace(-2.0, 2.0, 41))
        assert len(db.corner_list) == 1
        c = db.corner_list[0]
        for m in (c.mu.mu1, c.mu.mu2):
            assert abs(m + math.exp(m)) < 1e-8
        n1, n2 = (np.asarray(n) for n in c.normals)
        assert np.linalg.norm(n1 - n2) > 0.1

    def test_phase_diagram_wedge(self):
        w = builtin("symmetrized", b=4)
        g = legendre.phase_diagram(w, 3.0, 10)
        assert g.count(Phase.UNRESOLVED) == 0
        sup = g.support()
        corner = sup == "corner"
        assert corner.sum() >= 5
        # symmetric under exchange of the species
        assert np.array_equal(corner, corner.T)
        for i, row in enumerate(g.solutions):
            t = np.array([s.mbar.mu1 - s.mbar.mu2 for s in row])
            # along a row the boundary point moves monotonically across the corner
            assert np.all(np.diff(t) <= 1e-6)
            for j, s in enumerate(row):
                if corner[i, j]:
                    assert s.phase == Phase.CONDENSED_BOTH
                    assert abs(s.mbar.mu1 + math.exp(s.mbar.mu1)) < 1e-8
                elif sup[i, j] == "edge":
                    assert abs(t[j]) > 1e-6
            # each row crossing the wedge has edge cells on both sides of it
            js = np.flatnonzero(corner[i])
            if js.size:
                assert np.all(t[:js[0]] > 0) and np.all(t[js[-1] + 1:] < 0)
        assert any(corner[i].any() and (sup[i] == "edge").sum() >= 2 for i in range(len(g.rho1)))
