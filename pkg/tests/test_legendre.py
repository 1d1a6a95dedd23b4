import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zrpeq import grand_canonical as gc
from zrpeq import legendre
from zrpeq.errors import InvalidParam, NotInDomain
from zrpeq.grand_canonical import ChemicalPotential
from zrpeq.legendre import DensityPair, Phase
from zrpeq.weights import builtin


class TestDensityPair:
    @pytest.mark.parametrize("bad", [(-1.0, 1.0), (math.inf, 1.0), (0.0, 0.0), (math.nan, 2.0)])
    def test_rejects(self, bad):
        with pytest.raises(InvalidParam):
            DensityPair(*bad)

    def test_single_zero_allowed(self):
        assert tuple(DensityPair(0.0, 2.0)) == (0.0, 2.0)


class TestSolve:
    def test_duality_round_trip(self, eh4):
        mu = np.array([-1.0, -1.0])
        rho = gc.evaluate(eh4, ChemicalPotential(*mu)).R
        sol = legendre.solve(eh4, rho)
        np.testing.assert_allclose(sol.mbar.as_array(), mu, atol=1e-6)
        assert sol.phase is Phase.HOMOGENEOUS and not sol.on_boundary

    @given(st.floats(-3.0, -0.1), st.floats(-3.0, -0.1))
    @settings(max_examples=15, deadline=None)
    def test_round_trip_property(self, mu1, mu2):
        w = builtin("slowed-free", b=4)
        mu = np.array([mu1 - 1.5, mu2 - 1.5])
        rho = gc.evaluate(w, ChemicalPotential(*mu)).R
        sol = legendre.solve(w, rho)
        np.testing.assert_allclose(sol.mbar.as_array(), mu, atol=1e-6)

    def test_slowed_free_both_condense(self, sf4):
        sol = legendre.solve(sf4, (2.0, 3.0))
        assert sol.phase is Phase.CONDENSED_BOTH
        np.testing.assert_allclose(sol.rc, [0.5, 1.5], atol=1e-3)
        np.testing.assert_allclose(sol.mbar.as_array(), [-1.0, 0.0], atol=1e-6)

    def test_evans_hanney_b2_species_two_only(self):
        w = builtin("evans-hanney", b=2)
        sol = legendre.solve(w, (0.3, 3.0))
        assert sol.phase is Phase.CONDENSED2

    def test_evans_hanney_corner(self, eh4):
        sol = legendre.solve(eh4, (3.0, 3.0))
        assert sol.corner and sol.phase is Phase.CONDENSED_BOTH
        np.testing.assert_allclose(sol.mbar.as_array(), [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(sol.rc, [1.4, 2.4], atol=1e-6)

    def test_single_species_axis(self, single5):
        sol = legendre.solve(single5, (1.0, 0.0))
        assert sol.phase is Phase.CONDENSED1
        assert sol.rc[0] == pytest.approx(1.0 / 3.0, abs=1e-6)
        assert sol.rc[1] == 0.0

    def test_single_species_axis_homogeneous(self, single5):
        sol = legendre.solve(single5, (0.2, 0.0))
        assert sol.phase is Phase.HOMOGENEOUS
        assert sol.rc[0] == pytest.approx(0.2, rel=1e-8)

    @pytest.mark.parametrize("rho", [(0.5, 0.5), (2.0, 0.5), (0.4, 2.5), (2.5, 2.5)])
    def test_solution_invariants(self, eh4, rho):
        sol = legendre.solve(eh4, rho)
        r = np.asarray(rho)
        assert np.all(sol.rc <= r + 1e-6)
        st = gc.evaluate(eh4, sol.mbar, strict=False)
        assert sol.s_value == pytest.approx(r @ sol.mbar.as_array() - st.p_value, abs=1e-8)
        hom = np.all(np.abs(sol.rc - r) <= 1e-6 * r)
        assert hom == (sol.phase is Phase.HOMOGENEOUS)
        if sol.phase is not Phase.HOMOGENEOUS:
            v = r - sol.rc
            N = np.column_stack(sol.normal_cone)
            lam = np.linalg.lstsq(N, v, rcond=None)[0]
            assert np.all(lam >= -1e-6)
            np.testing.assert_allclose(N @ lam, v, atol=1e-5)

    def test_projection(self, sf4):
        sol = legendre.solve(sf4, (2.0, 3.0))
        again = legendre.solve(sf4, sol.rc)
        assert again.phase is Phase.HOMOGENEOUS
        np.testing.assert_allclose(again.rc, sol.rc, atol=1e-6)


class TestEntropy:
    def test_empty_limit(self, eh4):
        vals = [abs(legendre.entropy(eh4, (r, r))) for r in (1e-2, 1e-4, 1e-6)]
        assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-4

    def test_legendre_inequality(self, eh4):
        rho = np.array([0.6, 0.9])
        s = legendre.entropy(eh4, rho)
        rng = np.random.default_rng(3)
        for _ in range(100):
            mu = -rng.exponential(1.0, 2) - 1e-3
            p = gc.evaluate(eh4, ChemicalPotential(*mu)).p_value
            assert s >= rho @ mu - p - 1e-9

    def test_affine_on_condensed_ray(self, sf4):
        cone = legendre.subgradient_cone(sf4, (-1.0, 0.0))
        s = [legendre.entropy(sf4, cone.ray([lam])) for lam in (0.0, 0.5, 1.0)]
        assert abs(s[0] - 2 * s[1] + s[2]) < 1e-6


class TestSubgradientCone:
    def test_slowed_free_normal(self, sf4):
        cone = legendre.subgradient_cone(sf4, (-1.0, 0.0))
        assert len(cone.normals) == 1
        np.testing.assert_allclose(cone.normals[0], np.array([1.0, 1.0]) / math.sqrt(2), atol=1e-6)

    def test_symmetrized_corner(self, sym4, mu_star):
        cone = legendre.subgradient_cone(sym4, (mu_star, mu_star))
        assert len(cone.normals) == 2
        e = math.exp(mu_star)
        expect = [np.array([1.0, e]) / math.hypot(1, e), np.array([e, 1.0]) / math.hypot(1, e)]
        got = sorted((tuple(n) for n in cone.normals), key=lambda n: -n[0])
        for g, x in zip(got, expect):
            np.testing.assert_allclose(g, x, atol=1e-5)

    def test_flat_piece(self, eh4):
        cone = legendre.subgradient_cone(eh4, (-0.5, 0.0))
        assert len(cone.normals) == 1
        np.testing.assert_allclose(cone.normals[0], [0.0, 1.0], atol=1e-9)

    def test_interior_point_rejected(self, eh4):
        with pytest.raises(NotInDomain):
            legendre.subgradient_cone(eh4, (-0.5, -0.5))

    def test_outside_point_rejected(self):
        with pytest.raises(NotInDomain):
            legendre.subgradient_cone(builtin("evans-hanney", b=2.5), (0.0, 0.0))

    @pytest.mark.parametrize("mu", [(-1.0, 0.0), (-0.3, 0.0)])
    def test_ray_constancy(self, mu):
        w = builtin("evans-hanney", b=4)
        cone = legendre.subgradient_cone(w, mu)
        sols = [legendre.solve(w, cone.ray([lam])) for lam in (0.1, 1.0, 10.0)]
        for s in sols:
            np.testing.assert_allclose(s.mbar.as_array(), mu, atol=1e-6)
            np.testing.assert_allclose(s.rc, cone.rc, atol=1e-6)


@pytest.fixture(scope="module")
def eh_grid():
    return legendre.phase_diagram(builtin("evans-hanney", b=4), 3.0, 10)


class TestPhaseDiagram:
    def test_four_regions(self, eh_grid):
        for p in (Phase.HOMOGENEOUS, Phase.CONDENSED1, Phase.CONDENSED2, Phase.CONDENSED_BOTH):
            assert eh_grid.count(p) > 0
        assert eh_grid.count(Phase.UNRESOLVED) == 0
        assert eh_grid.labels[0, 0] == Phase.HOMOGENEOUS.value

    def test_single_regions_touch_axes(self, eh_grid):
        lab = eh_grid.labels
        assert Phase.CONDENSED1.value in lab[:, 0]
        assert Phase.CONDENSED2.value in lab[0, :]

    def test_homogeneous_connected_to_origin(self, eh_grid):
        hom = eh_grid.labels == Phase.HOMOGENEOUS.value
        seen = np.zeros_like(hom)
        stack = [(0, 0)]
        while stack:
            i, j = stack.pop()
            if not (0 <= i < hom.shape[0] and 0 <= j < hom.shape[1]) or seen[i, j] or not hom[i, j]:
                continue
            seen[i, j] = True
            # the homogeneous band is thin, so diagonal neighbours count
            stack += [(i + a, j + b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
        assert np.array_equal(seen, hom)

    def test_region_boundaries_present(self, eh_grid):
        assert len(eh_grid.region_boundaries()) > 0

    def test_continuity_of_rc(self, eh4):
        rho1 = np.linspace(0.2, 2.5, 24)
        rc = np.array([legendre.solve(eh4, (r, 1.0)).rc for r in rho1])
        assert np.max(np.abs(np.diff(rc, axis=0))) < 2.5 * (rho1[1] - rho1[0])

    def test_evans_hanney_b2(self):
        g = legendre.phase_diagram(builtin("evans-hanney", b=2), 3.0, 6)
        assert g.count(Phase.CONDENSED1) == 0 and g.count(Phase.CONDENSED_BOTH) == 0
        assert g.count(Phase.CONDENSED2) > 0

    def test_walk_past_divergent_corner(self):
        # the kink at the origin has infinite density for b=2; the minimum lies just before it
        sol = legendre.solve(builtin("evans-hanney", b=2), (1.6875, 2.8125))
        assert sol.phase == Phase.CONDENSED2
        np.testing.assert_allclose(sol.rc, [1.6875, 2.6875], atol=1e-6)

    def test_slowed_free_two_labels(self):
        g = legendre.phase_diagram(builtin("slowed-free", b=4), 3.0, 6)
        assert set(np.unique(g.labels)) == {Phase.HOMOGENEOUS.value, Phase.CONDENSED_BOTH.value}

    def test_bad_resolution(self, eh4):
        with pytest.raises(InvalidParam):
            legendre.phase_diagram(eh4, 3.0, 1)
