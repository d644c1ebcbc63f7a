"""Discrete linearized elasticity.

Minimizes ``F0(u; L) = 1/2 int E(u) : D^2W(I) : E(u) - L(u)`` over P1 fields.
The rigid kernel is removed with six Lagrange rows (``int u = 0`` and
``int curl u = 0``) rather than by pinning vertices, so the returned
minimizer is the zero-average-curl representative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .energy import EnergyModel, lame_at_identity
from .fem import LoadFunctional, Mesh, VectorField
from .tensor3 import Rot3


class EquilibriumError(ValueError):
    """Raised when a load fails the equilibration gate."""


def stiffness_matrix(mesh: Mesh, model: EnergyModel) -> sp.csr_matrix:
    """``K`` with ``u^T K u = int E(u) : D^2W(I) : E(u)``."""
    mu, half_lam = lame_at_identity(model)
    return (4.0 * mu * mesh.strain_gram + 2.0 * half_lam * mesh.divergence_gram).tocsr()


_STIFF_CACHE: dict = {}


def _stiffness(mesh, model):
    key = (id(mesh), model)
    if key not in _STIFF_CACHE:
        K = stiffness_matrix(mesh, model)
        _STIFF_CACHE[key] = (mesh, K, fem.constrained_solver(K, mesh.rigid_constraints))
    return _STIFF_CACHE[key][1:]


def rotate_load(R: Rot3, L: LoadFunctional) -> LoadFunctional:
    """``R^T L``: the load with densities ``R^T f`` and ``R^T G``."""
    Rm = np.asarray(R)
    return LoadFunctional(L.f, L.G, L.name, Rm.T @ L.transform, L.scale)


@dataclass
class LinearSolveReport:
    minimizer: VectorField
    energy: float
    identity_residual: float
    load_work: float
    multipliers: np.ndarray
    gauge: str = "int u = 0, int curl u = 0"

    def as_dict(self):
        return dict(energy=self.energy, identity_residual=self.identity_residual,
                    load_work=self.load_work, gauge=self.gauge,
                    multipliers=self.multipliers.tolist())


def _gate(L, mesh, tol=1e-8):
    rep = fem.check_equilibrated(L, mesh, tol=tol)
    if not rep.passed:
        raise EquilibriumError(
            f"load {L.name!r} is not equilibrated (residual {rep.max_residual:.3e}, scale {rep.scale:.3e})"
        )
    return rep


def solve_linear(mesh: Mesh, model: EnergyModel, L: LoadFunctional, check: bool = True) -> LinearSolveReport:
    if check:
        _gate(L, mesh)
    K, solve = _stiffness(mesh, model)
    b = fem.load_vector(L, mesh)
    if not np.any(b):
        z = VectorField.zeros(mesh)
        return LinearSolveReport(z, 0.0, 0.0, 0.0, np.zeros(mesh.rigid_constraints.shape[0]))
    u, mult = solve(b)
    # one step of iterative refinement keeps the identity residual at rounding level
    r = b - K @ u - mesh.rigid_constraints.T @ mult
    du, dm = solve(r)
    u, mult = u + du, mult + dm
    quad = float(u @ (K @ u))
    work = float(b @ u)
    energy = 0.5 * quad - work
    resid = abs(quad - work) / max(abs(work), np.finfo(float).tiny)
    return LinearSolveReport(VectorField(mesh, u), energy, resid, work, mult)


def linear_energy(mesh: Mesh, model: EnergyModel, L: LoadFunctional, u: VectorField) -> float:
    """``F0(u; L)`` for an arbitrary field."""
    K, _ = _stiffness(mesh, model)
    return float(0.5 * u.flat @ (K @ u.flat) - fem.load_vector(L, mesh) @ u.flat)


def betti_form(L1: LoadFunctional, L2: LoadFunctional, mesh: Mesh, model: EnergyModel) -> float:
    """``int E u1 : D^2W(I) : E u2`` for the linear solutions of ``L1`` and ``L2``."""
    K, _ = _stiffness(mesh, model)
    u1 = solve_linear(mesh, model, L1).minimizer
    u2 = solve_linear(mesh, model, L2).minimizer
    return float(u1.flat @ (K @ u2.flat))


def beta_of(R: Rot3, L: LoadFunctional, mesh: Mesh, model: EnergyModel) -> float:
    """``min F0(.; R^T L)``."""
    return solve_linear(mesh, model, rotate_load(R, L)).energy


def beta_via_betti(R: Rot3, L: LoadFunctional, mesh: Mesh, model: EnergyModel) -> float:
    RL = rotate_load(R, L)
    return -0.5 * betti_form(RL, RL, mesh, model)


def kernel_tolerance(L: LoadFunctional, mesh: Mesh) -> float:
    rep = fem.check_equilibrated(L, mesh)
    return max(1e-8, 10.0 * rep.max_residual)


def rotation_defect(L: LoadFunctional, mesh: Mesh, R: Rot3) -> float:
    """``L((R - I) x)``."""
    b = fem.load_vector(L, mesh)
    Rm = np.asarray(R)
    return float(b @ (mesh.vertices @ (Rm - np.eye(3)).T).ravel())


def rotation_kernel_scan(L: LoadFunctional, mesh: Mesh, rotations: Iterable[Rot3],
                         tol: Optional[float] = None) -> list:
    """Rotations among ``rotations`` with ``|L((R - I) x)| <= tol``."""
    _gate(L, mesh)
    if tol is None:
        tol = kernel_tolerance(L, mesh)
    return [R for R in rotations if abs(rotation_defect(L, mesh, R)) <= tol]


@dataclass
class AstaticMatrix:
    K: np.ndarray
    eigenvalues: np.ndarray
    no_equilibrium_axes: bool
    tol: float


def astatic_and_axes(L: LoadFunctional, mesh: Mesh, rel_tol: float = 1e-8) -> AstaticMatrix:
    """Astatic matrix ``K_ij = L(x_i e_j)`` and the no-axis-of-equilibrium predicate.

    For a body force alone this is ``int x (x) f``.  The predicate holds iff
    every pairwise eigenvalue sum is nonzero beyond tolerance.
    """
    _gate(L, mesh)
    b = fem.load_vector(L, mesh).reshape(-1, 3)
    K = mesh.vertices.T @ b  # sum_a x_i(a) b_j(a) = L(x_i e_j)
    lam = np.linalg.eigvalsh(0.5 * (K + K.T))
    tol = rel_tol * max(fem.load_scale(L, mesh), 1e-300)
    sums = [lam[i] + lam[j] for i in range(3) for j in range(i + 1, 3)]
    ok = bool(all(abs(s) > tol for s in sums)) and not L.is_zero
    return AstaticMatrix(K, lam, ok, tol)


# ---------------------------------------------------------------------------
# emitters


def write_beta_csv(path, rows) -> None:
    """Rows of ``(R, beta)``; the rotation is flattened row-major."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"R{i}{j}" for i in range(3) for j in range(3)] + ["beta"])
        for R, beta in rows:
            w.writerow([repr(float(v)) for v in np.asarray(R).ravel()] + [repr(float(beta))])


def write_identity_json(path, reports: dict) -> None:
    with open(path, "w") as fh:
        json.dump({k: v.as_dict() if hasattr(v, "as_dict") else v for k, v in reports.items()},
                  fh, indent=2, sort_keys=True)
