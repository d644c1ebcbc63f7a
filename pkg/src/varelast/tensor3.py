"""3x3 tensor algebra used by every other module.

Matrices are plain ``numpy`` arrays of shape ``(..., 3, 3)``; most helpers
broadcast over leading axes so that per-cell quantities can be handled in one
call.  ``Rot3`` is the only wrapper type, because rotations carry an
invariant (orthogonality, positive determinant) that downstream energy
identities rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROT_TOL = 1e-12
SYM_TOL = 1e-14


def det3(F):
    """Cofactor-expansion determinant, broadcasting over leading axes."""
    F = np.asarray(F, dtype=float)
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def cof3(F):
    """Cofactor matrix, so that ``cof(F).T @ F == det(F) * I``."""
    F = np.asarray(F, dtype=float)
    C = np.empty_like(F)
    C[..., 0, 0] = F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1]
    C[..., 0, 1] = F[..., 1, 2] * F[..., 2, 0] - F[..., 1, 0] * F[..., 2, 2]
    C[..., 0, 2] = F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0]
    C[..., 1, 0] = F[..., 0, 2] * F[..., 2, 1] - F[..., 0, 1] * F[..., 2, 2]
    C[..., 1, 1] = F[..., 0, 0] * F[..., 2, 2] - F[..., 0, 2] * F[..., 2, 0]
    C[..., 1, 2] = F[..., 0, 1] * F[..., 2, 0] - F[..., 0, 0] * F[..., 2, 1]
    C[..., 2, 0] = F[..., 0, 1] * F[..., 1, 2] - F[..., 0, 2] * F[..., 1, 1]
    C[..., 2, 1] = F[..., 0, 2] * F[..., 1, 0] - F[..., 0, 0] * F[..., 1, 2]
    C[..., 2, 2] = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return C


def sym(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def skew(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (F - np.swapaxes(F, -1, -2))


def frob(F):
    """Frobenius norm ``sqrt(tr(F^T F))``."""
    F = np.asarray(F, dtype=float)
    return np.sqrt(np.sum(F * F, axis=(-2, -1)))


def skew_of(a):
    """Cross-product matrix: ``skew_of(a) @ x == cross(a, x)``."""
    a = np.asarray(a, dtype=float)
    W = np.zeros(a.shape[:-1] + (3, 3))
    W[..., 0, 1] = -a[..., 2]
    W[..., 0, 2] = a[..., 1]
    W[..., 1, 0] = a[..., 2]
    W[..., 1, 2] = -a[..., 0]
    W[..., 2, 0] = -a[..., 1]
    W[..., 2, 1] = a[..., 0]
    return W


def axial(W):
    """Inverse of :func:`skew_of`; reads the entries below the diagonal."""
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def dist_SO3(F):
    """Distance from ``F`` to SO(3) in the Frobenius norm.

    Uses the singular values with a sign flip on the smallest one when
    ``det F < 0`` (the nearest rotation then reflects the weakest direction).
    """
    F = np.asarray(F, dtype=float)
    s = np.linalg.svd(F, compute_uv=False)
    s = np.array(s, copy=True)
    neg = det3(F) < 0
    s[..., 2] = np.where(neg, -s[..., 2], s[..., 2])
    return np.sqrt(np.sum((s - 1.0) ** 2, axis=-1))


def nearest_rotation(F):
    U, _, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


@dataclass(frozen=True)
class Rot3:
    """A rotation matrix validated at construction."""

    matrix: np.ndarray

    def __post_init__(self):
        R = np.array(self.matrix, dtype=float)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err > ROT_TOL or det3(R) <= 0:
            raise ValueError(f"not a rotation: |R^T R - I| = {err:.3e}, det = {det3(R):.3e}")
        R.setflags(write=False)
        object.__setattr__(self, "matrix", R)

    @property
    def T(self) -> "Rot3":
        return Rot3(self.matrix.T)

    def __matmul__(self, other):
        if isinstance(other, Rot3):
            return Rot3(self.matrix @ other.matrix)
        return self.matrix @ other

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    @classmethod
    def identity(cls) -> "Rot3":
        return cls(np.eye(3))

    @classmethod
    def random(cls, rng) -> "Rot3":
        """Haar-distributed rotation from a uniformly random unit quaternion."""
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        R = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        # re-orthonormalize so the 1e-12 invariant survives rounding
        return cls(nearest_rotation(R))


def euler_rodrigues(a, theta: float) -> Rot3:
    """Rotation by ``theta`` about the unit axis ``a``.

    R = I + sin(theta) W + (1 - cos(theta)) W^2 with W = skew_of(a).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("rotation axis must be a unit 3-vector")
    W = skew_of(a)
    R = np.eye(3) + np.sin(theta) * W + (1.0 - np.cos(theta)) * (W @ W)
    return Rot3(R)


R_STAR = Rot3(np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
