import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varelast import fem
from varelast.fem import VectorField
from varelast.tensor3 import Rot3, skew_of


class TestMeshes:
    def test_coarse_cylinder_volume(self):
        m = fem.build_cylinder_mesh(2, 6, 2, 1.0)
        assert np.all(m.volumes > 0)
        assert m.volume == pytest.approx(math.pi, rel=0.1)

    def test_first_ring_radius(self):
        m = fem.build_cylinder_mesh(5, 6, 2, 2.0)
        assert m.meta["radii"][1] == pytest.approx((1 / 5) ** 2)

    def test_outer_ring_on_unit_circle(self, default_mesh):
        r = np.hypot(default_mesh.vertices[:, 0], default_mesh.vertices[:, 1])
        assert r.max() == pytest.approx(1.0, abs=1e-15)
        assert np.sum(np.isclose(r, 1.0)) == 8 * 6 * 3

    @pytest.mark.parametrize("n_r", [2, 4, 8])
    def test_volume_error_halves_under_refinement(self, n_r):
        coarse = math.pi - fem.build_cylinder_mesh(n_r, 6, 2).volume
        fine = math.pi - fem.build_cylinder_mesh(2 * n_r, 6, 2).volume
        assert 0 < fine <= 0.5 * coarse

    @pytest.mark.parametrize("args", [(1, 6, 2), (4, 1, 2), (4, 6, 1)])
    def test_degenerate_counts_rejected(self, args):
        with pytest.raises(ValueError):
            fem.build_cylinder_mesh(*args)

    def test_box_volume(self, box_mesh):
        assert box_mesh.volume == pytest.approx(1.0, rel=1e-14)

    def test_dump_roundtrip(self, coarse_mesh, tmp_path):
        p = tmp_path / "mesh.txt"
        coarse_mesh.dump(p)
        m2 = fem.load_mesh(p)
        np.testing.assert_array_equal(m2.cells, coarse_mesh.cells)
        np.testing.assert_array_equal(m2.vertices, coarse_mesh.vertices)

    def test_disc_area(self):
        m = fem.build_disc_mesh(8, 6)
        assert m.volume == pytest.approx(math.pi, rel=0.02)


class TestFieldOperators:
    def test_strain_of_stretch(self, coarse_mesh):
        t = 0.37
        u = VectorField.interpolate(coarse_mesh, lambda x: np.column_stack([t * x[:, 0], 0 * x[:, 0], 0 * x[:, 0]]))
        assert fem.strain_L2_sq(u) == pytest.approx(t * t * coarse_mesh.volume, rel=1e-13)

    @given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
    def test_rigid_has_no_strain(self, a, c):
        m = fem.build_cylinder_mesh(2, 6, 2)
        W = skew_of(np.array(a))
        u = VectorField.interpolate(m, lambda x: x @ W.T + np.array(c))
        assert fem.strain_L2_sq(u) <= 1e-14 * (1 + np.sum(np.square(a)))

    def test_curl_of_rotation(self, default_mesh):
        a = np.array([0.3, -1.2, 0.5])
        u = VectorField.interpolate(default_mesh, lambda x: np.cross(a, x))
        np.testing.assert_allclose(fem.average_curl(u), 2 * a * default_mesh.volume, atol=1e-12)

    def test_curl_of_gradient(self, default_mesh):
        u = VectorField.interpolate(default_mesh, lambda x: np.tile([1.0, -2.0, 0.5], (len(x), 1)) * 0
                                    + np.column_stack([x[:, 0], 2 * x[:, 1], -x[:, 2]]))
        np.testing.assert_allclose(fem.average_curl(u), 0.0, atol=1e-14)

    def test_curl_is_linear(self, coarse_mesh, rng):
        u = VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3)))
        v = VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3)))
        np.testing.assert_allclose(fem.average_curl(2.0 * u - 3.0 * v),
                                   2.0 * fem.average_curl(u) - 3.0 * fem.average_curl(v), atol=1e-12)

    def test_strain_kills_skews(self, coarse_mesh, rng):
        u = VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3)))
        W = skew_of(rng.normal(size=3))
        uw = u + VectorField.interpolate(coarse_mesh, lambda x: x @ W.T)
        assert fem.strain_L2_sq(uw) == pytest.approx(fem.strain_L2_sq(u), rel=1e-12)


class TestProjection:
    def test_removes_rotation(self, default_mesh):
        a = np.array([1.0, 2.0, -0.5])
        u = VectorField.interpolate(default_mesh, lambda x: np.cross(a, x))
        p = fem.project_zero_avg_curl(u)
        assert np.max(np.abs(p.values)) < 1e-12

    def test_fixed_point(self, coarse_mesh, rng):
        u = fem.project_zero_avg_curl(VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3))))
        np.testing.assert_allclose(fem.project_zero_avg_curl(u).values, u.values, atol=1e-14)

    def test_strain_unchanged(self, coarse_mesh, rng):
        u = VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3)))
        p = fem.project_zero_avg_curl(u)
        assert fem.strain_L2_sq(p) == pytest.approx(fem.strain_L2_sq(u), abs=1e-12)

    def test_rotated_gauge(self, coarse_mesh, rng):
        R = Rot3.random(rng)
        u = VectorField(coarse_mesh, rng.normal(size=(coarse_mesh.n_vertices, 3)))
        p = fem.project_zero_avg_curl(u, R)
        c = fem.average_curl(VectorField(coarse_mesh, p.values @ np.asarray(R)))
        assert np.max(np.abs(c)) < 1e-12


class TestLoads:
    def test_zero_load(self, coarse_mesh):
        u = VectorField(coarse_mesh, np.ones((coarse_mesh.n_vertices, 3)))
        assert fem.apply_load(fem.zero_load(), u) == 0.0

    def test_constant_load_on_constant_field(self, box_mesh):
        u = VectorField(box_mesh, np.tile([0.0, 0.0, 1.0], (box_mesh.n_vertices, 1)))
        assert fem.apply_load(fem.constant_load([0, 0, 1.0]), u) == pytest.approx(box_mesh.volume)

    def test_constant_load_not_equilibrated(self, box_mesh):
        rep = fem.check_equilibrated(fem.constant_load([0, 0, 1.0]), box_mesh)
        assert not rep.passed
        assert rep.translation_residuals[2] == pytest.approx(box_mesh.volume)

    def test_zero_load_equilibrated(self, box_mesh):
        rep = fem.check_equilibrated(fem.zero_load(), box_mesh)
        assert rep.passed and rep.max_residual == 0.0

    def test_sec5_radial_pairing(self, default_mesh, sec5):
        u = VectorField.interpolate(default_mesh, lambda x: np.column_stack([x[:, 0], x[:, 1], 0 * x[:, 0]]))
        assert abs(fem.apply_load(sec5, u)) < 1e-12

    def test_sec5_equilibrated(self, default_mesh, sec5):
        rep = fem.check_equilibrated(sec5, default_mesh)
        assert rep.passed and rep.max_residual < 1e-12

    def test_exact_weights_sum_to_volume(self, default_mesh):
        q = fem.load_quadrature(default_mesh, "exact")
        assert q.weights.sum() == pytest.approx(math.pi, rel=1e-13)
        assert np.all(q.weights > 0)
        assert np.min(np.hypot(q.points[:, 0], q.points[:, 1])) > 0

    def test_cell_rule_exact_for_quadratics(self, box_mesh):
        q = fem.load_quadrature(box_mesh, "cells")
        # int over [-1/2, 1/2]^3 of x^2 = 1/12
        assert q.weights @ q.points[:, 0] ** 2 == pytest.approx(1 / 12, rel=1e-13)

    def test_quadrature_failure_on_nonfinite(self, box_mesh):
        L = fem.LoadFunctional(f=lambda x: np.full_like(x, np.nan))
        with pytest.raises(fem.QuadratureFailure):
            fem.load_vector(L, box_mesh)

    def test_exact_kind_needs_polar_mesh(self, box_mesh):
        with pytest.raises(ValueError):
            fem.load_quadrature(box_mesh, "exact")

    @given(st.floats(0.01, 10.0))
    def test_dual_norm_homogeneous(self, a):
        m = fem.build_cylinder_mesh(3, 6, 2)
        from varelast.disc_example import sec5_load

        base = fem.dual_norm_estimate(sec5_load(), m)
        assert fem.dual_norm_estimate(sec5_load().scaled(a), m) == pytest.approx(a * base, rel=1e-12)

    def test_dual_norm_zero(self, coarse_mesh):
        assert fem.dual_norm_estimate(fem.zero_load(), coarse_mesh) == 0.0

    def test_dual_norm_stable_under_refinement(self, sec5):
        a = fem.dual_norm_estimate(sec5, fem.build_cylinder_mesh(8, 6, 2))
        b = fem.dual_norm_estimate(sec5, fem.build_cylinder_mesh(16, 6, 4))
        assert 0 < a < np.inf and abs(a - b) <= 0.2 * b


class TestKorn:
    def test_at_least_one(self, coarse_mesh):
        assert fem.korn_constant_estimate(coarse_mesh) >= 1.0

    def test_direct_matches_dense(self):
        m = fem.build_cylinder_mesh(2, 6, 2)
        A, B = m.strain_gram.toarray(), m.gradient_gram.toarray()
        # orthonormal basis of {int u = 0, int curl u = 0}
        _, s, Vt = np.linalg.svd(m.rigid_constraints)
        Q = Vt[6:].T
        from scipy.linalg import eigh

        lam = eigh(Q.T @ A @ Q, Q.T @ B @ Q, eigvals_only=True)[0]
        assert fem.korn_rayleigh_min(m, "direct") == pytest.approx(lam, rel=1e-9)

    def test_lobpcg_matches_direct(self, default_mesh):
        assert fem.korn_rayleigh_min(default_mesh, "lobpcg") == pytest.approx(
            fem.korn_rayleigh_min(default_mesh, "direct"), rel=1e-8)

    def test_rotation_quotient_zero_but_excluded(self, coarse_mesh):
        u = VectorField.interpolate(coarse_mesh, lambda x: np.cross([0.0, 0.0, 1.0], x))
        assert fem.strain_L2_sq(u) < 1e-14
        assert np.linalg.norm(fem.average_curl(u)) > 1.0
        assert fem.korn_rayleigh_min(coarse_mesh) > 0.0

    def test_refinement_increases_estimate(self):
        # nested spaces: the minimal quotient can only decrease, so Z grows
        z = [fem.korn_constant_estimate(fem.build_cylinder_mesh(n, 6, 2)) for n in (2, 4)]
        assert z[1] >= z[0]

    def test_unknown_method(self, coarse_mesh):
        with pytest.raises(ValueError):
            fem.korn_rayleigh_min(coarse_mesh, "magic")
