import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from varelast.tensor3 import (R_STAR, Rot3, axial, cof3, det3, dist_SO3, euler_rodrigues, frob,
                              nearest_rotation, skew, skew_of, sym)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
mats = arrays(np.float64, (3, 3), elements=finite)
vecs = arrays(np.float64, (3,), elements=finite)


@given(mats)
def test_det_matches_numpy(F):
    np.testing.assert_allclose(det3(F), np.linalg.det(F), atol=1e-10)


@given(mats)
def test_cofactor_identity(F):
    np.testing.assert_allclose(cof3(F).T @ F, det3(F) * np.eye(3), atol=1e-9)


@given(mats)
def test_sym_skew_split(F):
    np.testing.assert_allclose(sym(F) + skew(F), F, atol=1e-15)
    assert abs(np.sum(sym(F) * skew(F))) < 1e-10


@given(vecs, vecs)
def test_skew_of_is_cross(a, x):
    np.testing.assert_allclose(skew_of(a) @ x, np.cross(a, x), atol=1e-12)
    np.testing.assert_array_equal(axial(skew_of(a)), a)


def test_broadcasting():
    F = np.random.default_rng(0).normal(size=(5, 4, 3, 3))
    assert det3(F).shape == (5, 4)
    assert cof3(F).shape == F.shape
    assert frob(F).shape == (5, 4)


class TestRotations:
    def test_rstar_is_quarter_turn(self):
        np.testing.assert_array_equal(R_STAR @ np.array([1.0, 0, 0]), [0.0, 1.0, 0.0])

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            Rot3(np.diag([1.0, 1.0, -1.0]))

    def test_rejects_non_orthogonal(self):
        with pytest.raises(ValueError):
            Rot3(np.eye(3) * 1.001)

    def test_rejects_non_unit_axis(self):
        with pytest.raises(ValueError):
            euler_rodrigues(np.array([1.0, 1.0, 0.0]), 0.3)

    @given(st.integers(0, 2**32 - 1))
    def test_random_rotation_invariant(self, seed):
        R = Rot3.random(np.random.default_rng(seed))
        M = np.asarray(R)
        assert np.linalg.norm(M.T @ M - np.eye(3)) <= 1e-12
        assert det3(M) > 0

    @given(st.floats(-np.pi, np.pi))
    def test_rodrigues_about_z(self, th):
        R = np.asarray(euler_rodrigues(np.array([0.0, 0.0, 1.0]), th))
        c, s = np.cos(th), np.sin(th)
        np.testing.assert_allclose(R, [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-14)

    def test_composition_and_transpose(self, rng):
        R1, R2 = Rot3.random(rng), Rot3.random(rng)
        np.testing.assert_allclose(np.asarray(R1 @ R2), np.asarray(R1) @ np.asarray(R2))
        np.testing.assert_allclose(np.asarray(R1.T @ R1), np.eye(3), atol=1e-14)


class TestDistance:
    def test_zero_on_rotations(self, rng):
        for _ in range(10):
            assert dist_SO3(np.asarray(Rot3.random(rng))) < 1e-12

    def test_scaled_identity(self):
        assert dist_SO3(2.0 * np.eye(3)) == pytest.approx(np.sqrt(3.0))

    def test_reflection(self):
        # nearest rotation of diag(1, 1, -1) flips the weakest axis
        assert dist_SO3(np.diag([1.0, 1.0, -1.0])) == pytest.approx(2.0)

    @given(mats)
    def test_nearest_rotation_attains_distance(self, F):
        R = nearest_rotation(F)
        assert np.linalg.det(R) > 0
        assert frob(F - R) == pytest.approx(dist_SO3(F), abs=1e-9)
