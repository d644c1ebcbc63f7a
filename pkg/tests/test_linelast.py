import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varelast import fem, linelast
from varelast.fem import LoadFunctional, VectorField
from varelast.tensor3 import R_STAR, Rot3, euler_rodrigues


def stretch_load():
    # f = x1 e1: equilibrated on a centred box, but with an axis of equilibrium
    return LoadFunctional(f=lambda x: np.column_stack([x[:, 0], 0 * x[:, 0], 0 * x[:, 0]]), name="stretch")


def twist_load():
    # f = (x1, 2 x2, -3 x3) is a gradient field with no net force or torque on a centred box
    return LoadFunctional(f=lambda x: x * np.array([1.0, 2.0, -3.0]), name="twist")


class TestSolveLinear:
    def test_zero_load(self, default_mesh, model):
        rep = linelast.solve_linear(default_mesh, model, fem.zero_load())
        assert rep.energy == 0.0
        assert not np.any(rep.minimizer.values)

    def test_identity_residual(self, default_mesh, model, sec5):
        rep = linelast.solve_linear(default_mesh, model, sec5)
        assert rep.identity_residual <= 1e-10
        # at the minimizer F0 = -L(u)/2
        assert rep.energy == pytest.approx(-0.5 * rep.load_work, rel=1e-12)
        assert rep.energy < 0

    def test_gauge(self, default_mesh, model, sec5):
        u = linelast.solve_linear(default_mesh, model, sec5).minimizer
        np.testing.assert_allclose(default_mesh.rigid_constraints @ u.flat, 0.0, atol=1e-13)

    def test_gauge_independence(self, default_mesh, model, sec5, rng):
        rep = linelast.solve_linear(default_mesh, model, sec5)
        W = rng.normal(size=3)
        shifted = rep.minimizer + VectorField.interpolate(default_mesh, lambda x: np.cross(W, x) + 0.3)
        assert linelast.linear_energy(default_mesh, model, sec5, shifted) == pytest.approx(rep.energy, rel=1e-10)

    def test_minimizer_beats_perturbations(self, coarse_mesh, model, sec5, rng):
        rep = linelast.solve_linear(coarse_mesh, model, sec5)
        for _ in range(5):
            p = VectorField(coarse_mesh, 1e-2 * rng.normal(size=(coarse_mesh.n_vertices, 3)))
            assert linelast.linear_energy(coarse_mesh, model, sec5, rep.minimizer + p) >= rep.energy

    def test_gate_refuses_constant_load(self, box_mesh, model):
        with pytest.raises(linelast.EquilibriumError):
            linelast.solve_linear(box_mesh, model, fem.constant_load([0.0, 0.0, 1.0]))

    @given(st.floats(0.1, 5.0))
    @settings(max_examples=10)
    def test_quadratic_scaling(self, a):
        m = fem.build_cylinder_mesh(3, 6, 2)
        from varelast.disc_example import sec5_load
        from varelast.energy import sec5_model

        e1 = linelast.solve_linear(m, sec5_model(), sec5_load()).energy
        ea = linelast.solve_linear(m, sec5_model(), sec5_load().scaled(a)).energy
        assert ea == pytest.approx(a * a * e1, rel=1e-10)


class TestBeta:
    def test_betti_consistency(self, default_mesh, model, sec5):
        for R in (Rot3.identity(), R_STAR):
            assert linelast.beta_via_betti(R, sec5, default_mesh, model) == pytest.approx(
                linelast.beta_of(R, sec5, default_mesh, model), rel=1e-10)

    def test_betti_symmetric(self, box_mesh, model):
        a = linelast.betti_form(stretch_load(), twist_load(), box_mesh, model)
        b = linelast.betti_form(twist_load(), stretch_load(), box_mesh, model)
        assert a == pytest.approx(b, rel=1e-10)

    def test_rotate_load_composition(self, box_mesh, rng):
        R1, R2 = Rot3.random(rng), Rot3.random(rng)
        L = twist_load()
        two = linelast.rotate_load(R2, linelast.rotate_load(R1, L))
        one = linelast.rotate_load(R1 @ R2, L)
        np.testing.assert_allclose(fem.load_vector(two, box_mesh), fem.load_vector(one, box_mesh), atol=1e-15)

    def test_rotate_load_pairing(self, box_mesh, rng):
        # (R^T L)(u) = L(R u)
        R = Rot3.random(rng)
        u = VectorField(box_mesh, rng.normal(size=(box_mesh.n_vertices, 3)))
        Ru = VectorField(box_mesh, u.values @ np.asarray(R).T)
        L = twist_load()
        assert fem.apply_load(linelast.rotate_load(R, L), u) == pytest.approx(fem.apply_load(L, Ru), rel=1e-12)

    def test_beta_under_axial_rotation(self, default_mesh, model, sec5):
        # a half turn about e3 flips the in-plane load, and beta is quadratic in L
        R = euler_rodrigues([0, 0, 1.0], np.pi)
        assert linelast.beta_of(R, sec5, default_mesh, model) == pytest.approx(
            linelast.beta_of(Rot3.identity(), sec5, default_mesh, model), rel=1e-10)


class TestKernel:
    def test_identity_in_kernel(self, default_mesh, sec5):
        assert linelast.rotation_defect(sec5, default_mesh, Rot3.identity()) == 0.0

    def test_rstar_in_kernel(self, default_mesh, sec5):
        assert abs(linelast.rotation_defect(sec5, default_mesh, R_STAR)) <= linelast.kernel_tolerance(sec5, default_mesh)

    def test_scan_keeps_identity(self, default_mesh, sec5, rng):
        rots = [Rot3.identity()] + [Rot3.random(rng) for _ in range(5)]
        kept = linelast.rotation_kernel_scan(sec5, default_mesh, rots)
        assert kept[0] is rots[0]

    def test_scan_gate(self, box_mesh):
        with pytest.raises(linelast.EquilibriumError):
            linelast.rotation_kernel_scan(fem.constant_load([1.0, 0, 0]), box_mesh, [Rot3.identity()])

    def test_stretch_defect(self, box_mesh):
        # L((R - I) x) = int x1 ((R - I) x)_1 = (R11 - 1) / 12
        R = euler_rodrigues([0, 0, 1.0], 0.4)
        assert linelast.rotation_defect(stretch_load(), box_mesh, R) == pytest.approx((np.cos(0.4) - 1) / 12,
                                                                                        rel=1e-12)


class TestAstatic:
    def test_stretch_has_axis(self, box_mesh):
        ast = linelast.astatic_and_axes(stretch_load(), box_mesh)
        np.testing.assert_allclose(ast.K, np.diag([1 / 12, 0, 0]), atol=1e-15)
        assert not ast.no_equilibrium_axes

    def test_twist_has_no_axis(self, box_mesh):
        ast = linelast.astatic_and_axes(twist_load(), box_mesh)
        np.testing.assert_allclose(ast.eigenvalues, np.array([-3.0, 1.0, 2.0]) / 12, atol=1e-15)
        assert ast.no_equilibrium_axes

    def test_zero_load(self, box_mesh):
        assert not linelast.astatic_and_axes(fem.zero_load(), box_mesh).no_equilibrium_axes


class TestEmitters:
    def test_beta_csv(self, tmp_path):
        p = tmp_path / "beta.csv"
        linelast.write_beta_csv(p, [(Rot3.identity(), -0.5)])
        lines = p.read_text().splitlines()
        assert lines[0].startswith("R00,R01") and lines[1].endswith("-0.5")

    def test_identity_json(self, tmp_path, default_mesh, model, sec5):
        import json

        p = tmp_path / "id.json"
        linelast.write_identity_json(p, {"I": linelast.solve_linear(default_mesh, model, sec5)})
        assert json.loads(p.read_text())["I"]["identity_residual"] <= 1e-10
