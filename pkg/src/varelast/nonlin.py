"""Constrained minimization of the finite-elasticity functional.

For a gauge rotation ``R`` the unknown is the rotated-frame displacement
``v`` (so that ``y = R (x + v)``), minimizing

    F(v; h R^T L) = int W(I + grad v) - h (R^T L)(v)

over ``{int curl v = 0, int v = 0, int |E v|^2 <= (M h)^2}``.  The physical
displacement is ``u = R v`` and the reported value is
``G(y; hL) = F(v; h R^T L) - h L((R - I) x)``.

The ``int v = 0`` row only fixes translations, on which an equilibrated load
and the energy are both blind.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, linelast
from .energy import EnergyModel, energy_of_H, stress_of_H, tangent_of_H
from .fem import LoadFunctional, Mesh, VectorField
from .tensor3 import Rot3, det3

log = logging.getLogger(__name__)


def alpha_star(C: float, C_Omega: float) -> float:
    return C / (4.0 * C * C_Omega + 8.0)


def constants_M0_gamma(C: float, C_Omega: float, K_Omega: float, dual_norm: float):
    """``gamma = C / (2 K (4 C C_Omega + 8))`` and ``M0 = max(1, 2 |L|_* / gamma)``."""
    for name, val in (("C", C), ("C_Omega", C_Omega), ("K_Omega", K_Omega), ("dual_norm", dual_norm)):
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive, got {val!r}")
    gamma = C / (2.0 * K_Omega * (4.0 * C * C_Omega + 8.0))
    return gamma, max(1.0, 2.0 * dual_norm / gamma)


@dataclass(frozen=True)
class ConstraintSet:
    R: Rot3
    rho: float
    M: float = 1.0
    curl_tol: float = 1e-10

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("ball radius must be positive")
        if self.M < 1:
            raise ValueError("M must be at least 1")


@dataclass
class SolverOptions:
    tol: float = 1e-10  # KKT residual relative to |h b|
    max_iter: int = 50
    det_floor: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 40
    curl_tol: float = 1e-10


class LineSearchError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class NonlinSolveReport:
    minimizer: VectorField  # physical displacement u = R v
    frame_field: VectorField  # v
    F: float  # F(v; h R^T L)
    G: float
    rescaled: float  # G / h^2
    ball_usage: float
    iterations: int
    backtracks: int
    det_floor_hits: int
    min_det: float
    kkt_residual: float
    h: float
    constraints: ConstraintSet
    trace: list = field(default_factory=list)

    @property
    def curl_residual(self) -> float:
        R = np.asarray(self.constraints.R)
        return float(np.max(np.abs(fem.average_curl(VectorField(self.minimizer.mesh,
                                                                 self.minimizer.values @ R)))))

    def summary(self) -> dict:
        return dict(h=self.h, F=self.F, G=self.G, rescaled=self.rescaled, ball_usage=self.ball_usage,
                    iterations=self.iterations, backtracks=self.backtracks,
                    det_floor_hits=self.det_floor_hits, min_det=self.min_det,
                    kkt_residual=self.kkt_residual, curl_residual=self.curl_residual)


# ---------------------------------------------------------------------------
# energy pieces on P1 fields


class _Problem:
    def __init__(self, mesh: Mesh, model: EnergyModel, b: np.ndarray, shift: float):
        self.mesh, self.model, self.b, self.shift = mesh, model, b, shift
        self.D = mesh.grad_operator
        self.vol = mesh.volumes
        self.C = mesh.rigid_constraints
        self.S = mesh.strain_gram

    def H(self, v):
        return (self.D @ v).reshape(-1, 3, 3)

    def energy(self, v, H=None) -> float:
        H = self.H(v) if H is None else H
        W = energy_of_H(self.model, H)
        if not np.all(np.isfinite(W)):
            return math.inf
        return math.fsum(self.vol * W) - float(self.b @ v)

    def gradient(self, v, H=None):
        H = self.H(v) if H is None else H
        P = stress_of_H(self.model, H) * self.vol[:, None, None]
        return self.D.T @ P.ravel() - self.b

    def tangent(self, v, H=None) -> sp.csr_matrix:
        H = self.H(v) if H is None else H
        A = tangent_of_H(self.model, H).reshape(-1, 9, 9) * self.vol[:, None, None]
        A = 0.5 * (A + np.swapaxes(A, 1, 2))
        m = len(A)
        blocks = sp.bsr_matrix((A, np.arange(m), np.arange(m + 1)), shape=(9 * m, 9 * m))
        return (self.D.T @ blocks @ self.D).tocsr()

    def strain_sq(self, v) -> float:
        return float(v @ (self.S @ v))

    def kkt(self, g, v, on_ball: bool):
        """Residual of ``g + C^T lam + 2 mu S v = 0`` with ``mu >= 0`` by least squares."""
        cols = [self.C.T]
        if on_ball:
            cols.append((2.0 * (self.S @ v))[:, None])
        A = np.hstack(cols)
        coef, *_ = np.linalg.lstsq(A, -g, rcond=None)
        if on_ball and coef[-1] < 0:
            coef, *_ = np.linalg.lstsq(self.C.T, -g, rcond=None)
            A = self.C.T
        return float(np.linalg.norm(g + A @ coef))


def _min_det(H) -> float:
    return float(np.min(det3(H + np.eye(3))))


def _rescale_into_ball(prob, v, rho):
    s = prob.strain_sq(v)
    if s > rho * rho:
        return v * (rho / math.sqrt(s)), True
    return v, False


def minimize_constrained(mesh: Mesh, model: EnergyModel, L: LoadFunctional, h: float, M: float,
                         R: Optional[Rot3] = None, opts: Optional[SolverOptions] = None) -> NonlinSolveReport:
    """Newton iteration on ``{int v = 0, int curl v = 0}`` with a ball safeguard.

    Steps come from the saddle-point system with the finite-difference
    tangent; if that direction is not a descent direction the linear
    stiffness replaces the tangent.  Backtracking rejects any trial with
    ``det(I + grad v) <= det_floor`` on some cell, and a trial leaving the
    ball is scaled back onto it.
    """
    opts = opts or SolverOptions()
    R = R or Rot3.identity()
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    cons = ConstraintSet(R, M * h, M, opts.curl_tol)
    linelast._gate(L, mesh)
    RL = linelast.rotate_load(R, L)
    b = h * fem.load_vector(RL, mesh)
    shift = h * linelast.rotation_defect(L, mesh, R)
    prob = _Problem(mesh, model, b, shift)
    rho = cons.rho
    n = mesh.n_dofs

    if not np.any(b):
        v = np.zeros(n)
    else:
        v = h * linelast.solve_linear(mesh, model, RL, check=False).minimizer.flat
        v, _ = _rescale_into_ball(prob, v, rho)

    K0, solve0 = linelast._stiffness(mesh, model)
    scale = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
    Hc = prob.H(v)
    Fv = prob.energy(v, Hc)
    trace = [dict(iter=0, F=Fv, kkt=None, step=None)]
    iters = backtracks = det_hits = 0
    kkt = 0.0
    if np.any(b):
        for iters in range(1, opts.max_iter + 1):
            g = prob.gradient(v, Hc)
            on_ball = prob.strain_sq(v) >= rho * rho * (1 - 1e-12)
            kkt = prob.kkt(g, v, on_ball) / scale
            trace[-1]["kkt"] = kkt
            if kkt <= opts.tol:
                iters -= 1
                break
            Kt = prob.tangent(v, Hc)
            try:
                dv, _ = fem.constrained_solver(Kt, prob.C)(-g)
                descent = np.all(np.isfinite(dv)) and float(g @ dv) < 0
            except RuntimeError:
                descent = False
            if not descent:
                dv, _ = solve0(-g)
            slope = float(g @ dv)
            t, accepted = 1.0, False
            for _ in range(opts.max_backtracks):
                trial = v + t * dv
                trial, _ = _rescale_into_ball(prob, trial, rho)
                Ht = prob.H(trial)
                if _min_det(Ht) <= opts.det_floor:
                    det_hits += 1
                    t *= 0.5
                    backtracks += 1
                    continue
                Ft = prob.energy(trial, Ht)
                if Ft <= Fv + opts.armijo * t * slope:
                    accepted = True
                    break
                t *= 0.5
                backtracks += 1
            if not accepted:
                # at rounding level the Armijo test can fail on an already stationary point
                if kkt <= 100 * opts.tol:
                    break
                raise LineSearchError(f"line search failed at iteration {iters} (kkt {kkt:.3e})", trace)
            v, Hc, Fv = trial, Ht, Ft
            trace.append(dict(iter=iters, F=Fv, kkt=None, step=t))
        else:
            raise LineSearchError(f"no convergence in {opts.max_iter} iterations (kkt {kkt:.3e})", trace)

    Vf = VectorField(mesh, v)
    u = VectorField(mesh, v.reshape(-1, 3) @ np.asarray(R).T)
    G = Fv - shift
    rep = NonlinSolveReport(
        minimizer=u, frame_field=Vf, F=Fv, G=G, rescaled=G / h**2,
        ball_usage=prob.strain_sq(v) / rho**2, iterations=iters, backtracks=backtracks,
        det_floor_hits=det_hits, min_det=_min_det(Hc), kkt_residual=kkt, h=h, constraints=cons,
        trace=trace,
    )
    return rep


# ---------------------------------------------------------------------------
# local minimality


@dataclass
class LocalMinReport:
    differences: np.ndarray  # (n_dirs, n_eps)
    eps_grid: np.ndarray
    tol: float
    F: float

    @property
    def min_difference(self) -> float:
        return float(np.min(self.differences))

    @property
    def per_direction_pass(self) -> np.ndarray:
        return np.all(self.differences >= -self.tol, axis=1)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.per_direction_pass))


class InvalidDirection(ValueError):
    pass


def energy_difference(rep: NonlinSolveReport, model: EnergyModel, L: LoadFunctional,
                      psi: VectorField, eps: float) -> float:
    """``F(v + eps R^T psi) - F(v)`` with the per-cell energy differences summed first."""
    mesh = rep.frame_field.mesh
    R = np.asarray(rep.constraints.R)
    phi = (psi.values @ R).ravel()  # R^T psi
    D = mesh.grad_operator
    H0 = (D @ rep.frame_field.flat).reshape(-1, 3, 3)
    H1 = H0 + eps * (D @ phi).reshape(-1, 3, 3)
    dW = energy_of_H(model, H1) - energy_of_H(model, H0)
    if not np.all(np.isfinite(dW)):
        return math.inf
    b = rep.h * fem.load_vector(linelast.rotate_load(rep.constraints.R, L), mesh)
    return math.fsum(mesh.volumes * dW) - eps * float(b @ phi)


def admissible_direction(psi: VectorField, R: Rot3, tol: float = 1e-10) -> bool:
    Rm = np.asarray(R)
    c = fem.average_curl(VectorField(psi.mesh, psi.values @ Rm))
    return bool(np.max(np.abs(c)) <= tol * max(1.0, float(np.linalg.norm(psi.flat))))


def random_directions(mesh: Mesh, R: Rot3, n_dirs: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_dirs):
        psi = VectorField(mesh, rng.normal(size=(mesh.n_vertices, 3)))
        psi = fem.project_zero_avg_curl(psi, R)
        nrm = math.sqrt(float(psi.flat @ (mesh.h1_gram @ psi.flat)))
        out.append(psi * (1.0 / nrm))
    return out


def verify_local_min(rep: NonlinSolveReport, model: EnergyModel, L: LoadFunctional, n_dirs: int = 20,
                     eps_grid: Optional[Sequence[float]] = None, seed: int = 0,
                     directions: Optional[list] = None) -> LocalMinReport:
    """Energy differences along random admissible directions, ``eps`` in multiples of ``h``."""
    if eps_grid is None:
        eps_grid = np.array([1e-4, 1e-3, 1e-2, 1e-1]) * rep.h
    eps_grid = np.asarray(eps_grid, dtype=float)
    R = rep.constraints.R
    mesh = rep.frame_field.mesh
    if directions is None:
        directions = random_directions(mesh, R, n_dirs, seed)
    for psi in directions:
        if not admissible_direction(psi, R):
            raise InvalidDirection("test direction has nonzero average curl in the gauge frame")
    diffs = np.array([[energy_difference(rep, model, L, psi, e) if e != 0 else 0.0 for e in eps_grid]
                      for psi in directions])
    tol = 1e-12 * abs(rep.F) + 1e-14
    return LocalMinReport(diffs, eps_grid, tol, rep.F)


# ---------------------------------------------------------------------------
# sweeps and branches


def probe_fields(mesh: Mesh, n: int = 4, seed: int = 7):
    """Fixed smooth probe fields for the weak-convergence diagnostic."""
    rng = np.random.default_rng(seed)
    x = mesh.vertices
    out = []
    for _ in range(n):
        A = rng.normal(size=(3, 3))
        k = rng.normal(size=3) * 2.0
        out.append(VectorField(mesh, np.sin(x @ k)[:, None] * (x @ A.T)))
    return out


def strain_inner(u: VectorField, w: VectorField) -> float:
    m = u.mesh
    Gu, Gw = u.cell_gradients(), w.cell_gradients()
    Eu = 0.5 * (Gu + np.swapaxes(Gu, 1, 2))
    Ew = 0.5 * (Gw + np.swapaxes(Gw, 1, 2))
    return float(math.fsum(m.volumes * np.sum(Eu * Ew, axis=(1, 2))))


@dataclass
class SweepRow:
    h: float
    rescaled: float
    ball_usage: float
    error_to_target: float
    probes: list
    iterations: int
    kkt_residual: float


@dataclass
class SweepTable:
    rows: list
    target: float
    M: float
    gauge: list
    error: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.error is None

    @property
    def errors(self):
        return np.array([r.error_to_target for r in self.rows])

    def monotone_within(self, noise: float = 0.1) -> bool:
        e = self.errors
        return bool(np.all(e[1:] <= e[:-1] * (1.0 + noise) + 1e-15))

    def final_within(self, rel: float = 0.1) -> bool:
        if not self.rows:
            return False
        return self.rows[-1].error_to_target <= rel * abs(self.target) + 1e-15

    def inactivity_threshold(self, margin: float = 0.0):
        """Largest ``h`` whose ball usage reaches ``1 - margin`` (None if never)."""
        hit = [r.h for r in self.rows if r.ball_usage >= 1.0 - margin]
        return max(hit) if hit else None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n_p = len(self.rows[0].probes) if self.rows else 0
            w.writerow(["h", "rescaled", "target", "error", "ball_usage", "iterations", "kkt"]
                       + [f"probe{k}" for k in range(n_p)])
            for r in self.rows:
                w.writerow([repr(float(x)) for x in (r.h, r.rescaled, self.target, r.error_to_target,
                                                     r.ball_usage)]
                           + [r.iterations, repr(float(r.kkt_residual))] + [repr(float(p)) for p in r.probes])

    def as_dict(self):
        return dict(rows=[asdict(r) for r in self.rows], target=self.target, M=self.M,
                    gauge=self.gauge, error=self.error,
                    monotone=self.monotone_within() if len(self.rows) > 1 else None,
                    inactivity_threshold=self.inactivity_threshold())


def _check_h_list(h_list):
    h = np.asarray(h_list, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("h_list must be a non-empty list")
    if np.any(h <= 0) or np.any(h >= 1):
        raise ValueError("every h must lie in (0, 1)")
    if np.any(np.diff(h) >= 0):
        raise ValueError("h_list must be strictly decreasing")
    return h


def h_sweep(mesh: Mesh, model: EnergyModel, L: LoadFunctional, R: Optional[Rot3], h_list, M: float = 1.0,
            opts: Optional[SolverOptions] = None, trace_path=None) -> SweepTable:
    """Rescaled energies ``h^-2 G`` along ``h_list`` against the discrete linear target."""
    R = R or Rot3.identity()
    hs = _check_h_list(h_list)
    RL = linelast.rotate_load(R, L)
    lin = linelast.solve_linear(mesh, model, RL)
    target = lin.energy
    probes = probe_fields(mesh)
    table = SweepTable([], target, M, np.asarray(R).tolist())
    fh = open(trace_path, "w") if trace_path else None
    try:
        for h in hs:
            try:
                rep = minimize_constrained(mesh, model, L, float(h), M, R, opts)
            except (LineSearchError, ValueError) as exc:
                table.error = f"h={h}: {exc}"
                break
            scaled = rep.frame_field * (1.0 / h) - lin.minimizer
            pr = [strain_inner(scaled, w) for w in probes]
            table.rows.append(SweepRow(float(h), rep.rescaled, rep.ball_usage, abs(rep.rescaled - target), pr,
                                       rep.iterations, rep.kkt_residual))
            if fh:
                for t in rep.trace:
                    fh.write(json.dumps(dict(h=float(h), **t)) + "\n")
            log.info("h=%g rescaled=%.10g usage=%.3e", h, rep.rescaled, rep.ball_usage)
    finally:
        if fh:
            fh.close()
    return table


@dataclass
class BranchTable:
    rotations: list
    rescaled: list
    betas: list
    delta: float
    h: float
    pairs: list  # (i, j, |difference|, distinct, same rotation)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"R{i}{j}" for i in range(3) for j in range(3)] + ["h", "rescaled", "beta"])
            for R, e, b in zip(self.rotations, self.rescaled, self.betas):
                w.writerow([repr(float(x)) for x in np.asarray(R).ravel()]
                           + [repr(self.h), repr(float(e)), repr(float(b))])

    def as_dict(self):
        return dict(rotations=[np.asarray(R).tolist() for R in self.rotations], rescaled=self.rescaled,
                    betas=self.betas, delta=self.delta, h=self.h, pairs=self.pairs)


def multi_branch(mesh: Mesh, model: EnergyModel, L: LoadFunctional, rotations: Sequence[Rot3], h: float,
                 M: float = 1.0, opts: Optional[SolverOptions] = None, same_tol: float = 1e-9) -> BranchTable:
    """One constrained solve per gauge rotation at a fixed ``h``."""
    for R in rotations:
        if abs(linelast.rotation_defect(L, mesh, R)) > linelast.kernel_tolerance(L, mesh):
            raise ValueError("rotation is not in the kernel of the load")
    vals = [minimize_constrained(mesh, model, L, h, M, R, opts).rescaled for R in rotations]
    betas = [linelast.beta_of(R, L, mesh, model) for R in rotations]
    n = len(rotations)
    same = [[np.allclose(np.asarray(rotations[i]), np.asarray(rotations[j]), atol=1e-14) for j in range(n)]
            for i in range(n)]
    gaps = [abs(betas[i] - betas[j]) for i in range(n) for j in range(i + 1, n) if not same[i][j]]
    delta = min(gaps) if gaps else 0.0
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            d = abs(vals[i] - vals[j])
            if same[i][j]:
                ok = d <= same_tol * max(1.0, abs(vals[i]))
            else:
                ok = d >= 0.5 * delta
            pairs.append(dict(i=i, j=j, difference=d, holds=bool(ok), same_rotation=bool(same[i][j])))
    return BranchTable(list(rotations), vals, betas, delta, h, pairs)
