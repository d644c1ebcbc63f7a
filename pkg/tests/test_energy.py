import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from varelast.energy import (EnergyModel, OgdenParams, YeohParams, dw, energy_of_H, growth_exponents,
                             lame_at_identity, linear_elasticity_tensor, probe_assumptions,
                             quadform_at_identity, second_difference_quadform, sec5_model, stress_of_H,
                             tangent_of_H, w_total, w_vol)
from varelast.tensor3 import Rot3

YEOH = EnergyModel(YeohParams(2.0, 1.0, 1.0, 2.0 / 3.0))
YEOH_B = EnergyModel(YeohParams(0.7, 0.3, 0.05, 1.5))
OGDEN = EnergyModel(OgdenParams((1.0, 0.2), (2.0, 3.0), (0.5,), (4.0,), 1.2))
MODELS = [YEOH, YEOH_B, OGDEN]
IDS = ["yeoh-sec5", "yeoh-b", "ogden"]

small = st.floats(-0.3, 0.3, allow_nan=False)
small_H = arrays(np.float64, (3, 3), elements=small)


def random_sym(rng):
    B = rng.normal(size=(3, 3))
    return 0.5 * (B + B.T)


class TestParams:
    def test_yeoh_requires_positive(self):
        with pytest.raises(ValueError):
            YeohParams(c1=0.0)

    def test_ogden_exponent_bounds(self):
        with pytest.raises(ValueError):
            OgdenParams((1.0,), (1.0,))
        with pytest.raises(ValueError):
            OgdenParams((1.0,), (2.0,), (1.0,), (2.0,))

    def test_ogden_length_mismatch(self):
        with pytest.raises(ValueError):
            OgdenParams((1.0, 2.0), (2.0,))

    def test_kind(self):
        assert YEOH.kind == "yeoh" and OGDEN.kind == "ogden"


class TestVolumetric:
    def test_zero_at_one(self):
        assert w_vol(1.0, 2.0) == 0.0

    @given(st.floats(1e-6, 1e3))
    def test_nonnegative(self, t):
        assert w_vol(t, 1.0) >= 0.0

    def test_infinite_for_nonpositive(self):
        assert np.all(np.isinf(w_vol(np.array([0.0, -1.0]))))

    def test_blowup(self):
        v = w_vol(np.logspace(-3, -12, 20))
        assert np.all(np.diff(v) > 0)


@pytest.mark.parametrize("model", MODELS, ids=IDS)
class TestDensity:
    def test_zero_on_rotations(self, model, rng):
        Rs = np.array([Rot3.random(rng).matrix for _ in range(20)])
        assert np.max(np.abs(w_total(model, Rs))) < 1e-13

    def test_frame_indifference(self, model, rng):
        F = np.eye(3) + 0.4 * rng.normal(size=(50, 3, 3))
        F = F[np.linalg.det(F) > 0]
        R = np.array([Rot3.random(rng).matrix for _ in range(len(F))])
        np.testing.assert_allclose(w_total(model, R @ F), w_total(model, F), rtol=1e-10)

    def test_infinite_when_inverted(self, model):
        assert w_total(model, np.diag([-1.0, 1.0, 1.0])) == np.inf

    def test_H_form_matches_F_form(self, model, rng):
        H = 0.2 * rng.normal(size=(10, 3, 3))
        np.testing.assert_allclose(energy_of_H(model, H), w_total(model, np.eye(3) + H), rtol=1e-12)

    @given(H=small_H)
    def test_stress_is_gradient(self, model, H):
        if np.linalg.det(np.eye(3) + H) < 0.2:
            return
        P = stress_of_H(model, H)
        E = np.random.default_rng(0).normal(size=(3, 3))
        t = 1e-6
        fd = (energy_of_H(model, H + t * E) - energy_of_H(model, H - t * E)) / (2 * t)
        assert np.sum(P * E) == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_stress_vanishes_at_identity(self, model):
        np.testing.assert_allclose(stress_of_H(model, np.zeros((3, 3))), 0.0, atol=1e-14)

    def test_stress_raises_below_floor(self, model):
        with pytest.raises(ValueError):
            stress_of_H(model, np.diag([-1.0, 0.0, 0.0]))

    def test_tangent_major_symmetry(self, model, rng):
        A = tangent_of_H(model, 0.1 * rng.normal(size=(3, 3)))
        np.testing.assert_allclose(A, np.transpose(A, (2, 3, 0, 1)), atol=1e-6)

    def test_quadform_matches_second_difference(self, model, rng):
        for _ in range(20):
            B = random_sym(rng)
            q = quadform_at_identity(model, B)
            assert second_difference_quadform(model, B) == pytest.approx(q, rel=1e-4)

    def test_tensor_consistent_with_quadform(self, model, rng):
        C = linear_elasticity_tensor(model)
        B = random_sym(rng)
        assert 0.5 * np.einsum("ij,ijkl,kl", B, C, B) == pytest.approx(quadform_at_identity(model, B))

    def test_tangent_at_identity_is_elasticity_tensor(self, model, rng):
        A = tangent_of_H(model, np.zeros((3, 3)))
        B = random_sym(rng)
        assert np.einsum("ij,ijkl,kl", B, A, B) == pytest.approx(2 * quadform_at_identity(model, B), rel=1e-7)

    def test_probes_pass(self, model):
        rep = probe_assumptions(model, 300, seed=1)
        assert rep.passed, rep.failures
        assert rep.coercivity_C > 0 and rep.growth_C > 0


class TestLinearization:
    def test_sec5_model_is_four_B_squared(self, rng):
        m = sec5_model()
        for _ in range(10):
            B = random_sym(rng)
            assert quadform_at_identity(m, B) == pytest.approx(4 * np.sum(B * B), rel=1e-14)

    @pytest.mark.parametrize("c1,c_vol", [(2.0, 4.0 / 3.0), (1.0, 1.0), (3.0, 0.5)])
    def test_yeoh_lame_pair(self, c1, c_vol, rng):
        # 2 c1 |B|^2 + (2 c_vol - 2 c1 / 3) (tr B)^2
        m = EnergyModel(YeohParams(c1, 1.0, 1.0, c_vol))
        B = random_sym(rng)
        expect = 2 * c1 * np.sum(B * B) + (2 * c_vol - 2 * c1 / 3) * np.trace(B) ** 2
        assert quadform_at_identity(m, B) == pytest.approx(expect)
        assert second_difference_quadform(m, B) == pytest.approx(expect, rel=1e-4)

    def test_traceless_B_ignores_c_vol(self, rng):
        B = random_sym(rng)
        B -= np.trace(B) / 3 * np.eye(3)
        for cv in (0.5, 4.0 / 3.0, 3.0):
            m = EnergyModel(YeohParams(2.0, 1.0, 1.0, cv))
            assert second_difference_quadform(m, B) == pytest.approx(4 * np.sum(B * B), rel=1e-4)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            quadform_at_identity(YEOH, np.triu(np.ones((3, 3))))

    def test_ogden_shear_modulus(self):
        mu, _ = lame_at_identity(OGDEN)
        assert mu == pytest.approx(0.25 * (1.0 * 4 + 0.2 * 9 + 0.5 * 16))


def test_growth_exponents():
    assert growth_exponents(YEOH) == (3.0, 1.5, 2.0)
    s, q, r = growth_exponents(EnergyModel(OgdenParams((1.0,), (2.0,), (1.0,), (3.0,))), r=2.0)
    assert s == pytest.approx(12 / 8) and q == pytest.approx(18 / 12) and r == 2.0


def test_dw_matches_stress(rng):
    F = np.eye(3) + 0.1 * rng.normal(size=(3, 3))
    np.testing.assert_allclose(dw(YEOH, F), stress_of_H(YEOH, F - np.eye(3)))


class TestFourBSquared:
    def test_default_model_gives_four_B_squared(self, model, rng):
        for _ in range(100):
            B = random_sym(rng)
            target = 4.0 * np.sum(B * B)
            assert second_difference_quadform(model, B) == pytest.approx(target, rel=1e-4)
            assert quadform_at_identity(model, B) == pytest.approx(target, rel=1e-12)


def test_uniaxial_stretch_scalar_rederivation():
    lam, c_vol = 1.1, 4.0 / 3.0
    i1 = (lam**2 + 2.0) / lam ** (2.0 / 3.0) - 3.0
    expect = 2.0 * i1 + i1**2 + i1**3 + c_vol * (lam**2 - 1.0 - 2.0 * math.log(lam))
    m = EnergyModel(YeohParams(2.0, 1.0, 1.0, c_vol))
    assert float(w_total(m, np.diag([lam, 1.0, 1.0]))) == pytest.approx(expect, rel=1e-13)
    assert expect > 0
