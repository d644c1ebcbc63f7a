"""Stored-energy densities with an isochoric/volumetric split.

Every density is ``W(F) = W_iso(F / det(F)**(1/3)) + g(det F)`` with the
volumetric part ``g(t) = c_vol * (t**2 - 1 - 2 log t)`` and ``W = +inf`` for
``det F <= 0``.  Two isochoric families are provided: Yeoh (polynomial in
``|F|^2 - 3``) and Ogden (powers of the singular values of ``F`` and
``cof F``).

Evaluation is written in terms of the displacement gradient ``H = F - I``
wherever possible.  Near the identity ``|F|^2 - 3`` and ``det F - 1`` are
small differences of O(1) numbers; forming them from ``H`` directly keeps
energies of size ``h**2`` accurate to full relative precision, which the
local-minimality checks downstream depend on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .tensor3 import Rot3, cof3, det3, dist_SO3

DET_SMOOTH_FLOOR = 1e-8


@dataclass(frozen=True)
class YeohParams:
    c1: float = 2.0
    c2: float = 1.0
    c3: float = 1.0
    c_vol: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c_vol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Yeoh coefficient {name} must be positive")


@dataclass(frozen=True)
class OgdenParams:
    c: tuple = (1.0,)
    gamma: tuple = (2.0,)
    d: tuple = ()
    delta: tuple = ()
    c_vol: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "gamma", tuple(float(v) for v in self.gamma))
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        if len(self.c) != len(self.gamma) or len(self.d) != len(self.delta):
            raise ValueError("Ogden coefficient and exponent lists differ in length")
        if any(v < 0 for v in self.c + self.d):
            raise ValueError("Ogden coefficients must be nonnegative")
        if any(g < 1.5 for g in self.gamma) or any(dl < 3.0 for dl in self.delta):
            raise ValueError("Ogden exponents need gamma_i >= 3/2 and delta_j >= 3")
        if not self.c_vol > 0:
            raise ValueError("c_vol must be positive")


@dataclass(frozen=True)
class EnergyModel:
    """A homogeneous stored-energy density."""

    params: Union[YeohParams, OgdenParams] = field(default_factory=YeohParams)

    @property
    def kind(self) -> str:
        return "yeoh" if isinstance(self.params, YeohParams) else "ogden"

    @property
    def c_vol(self) -> float:
        return self.params.c_vol

    def __call__(self, F):
        return w_total(self, F)


def sec5_model() -> EnergyModel:
    """Yeoh model whose linearization at I is exactly 4|B|^2 (c1 = 2, c_vol = 2/3)."""
    return EnergyModel(YeohParams(c1=2.0, c2=1.0, c3=1.0, c_vol=2.0 / 3.0))


# ---------------------------------------------------------------------------
# volumetric part


def w_vol(t, c_vol: float = 1.0):
    """``c_vol (t^2 - 1 - 2 log t)`` for ``t > 0``, ``+inf`` otherwise."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, np.inf)
    pos = t > 0
    d = t[pos] - 1.0
    out[pos] = _g_of_d(d, c_vol)
    return out if out.ndim else float(out)


def _g_of_d(d, c_vol):
    # t^2 - 1 - 2 log t with t = 1 + d
    return c_vol * (d * (2.0 + d) - 2.0 * np.log1p(d))


def _dg_of_d(d, c_vol):
    # g'(t) = 2 c (t - 1/t) = 2 c d (2 + d) / (1 + d)
    return 2.0 * c_vol * d * (2.0 + d) / (1.0 + d)


# ---------------------------------------------------------------------------
# kinematic helpers in displacement-gradient form


def _tr(H):
    return H[..., 0, 0] + H[..., 1, 1] + H[..., 2, 2]


def _det_minus_one(H):
    """``det(I + H) - 1`` without forming the O(1) determinant."""
    tr = _tr(H)
    i2 = 0.5 * (tr * tr - np.einsum("...ij,...ji->...", H, H))
    return tr + i2 + det3(H)


def _dev(S):
    return S - (_tr(S) / 3.0)[..., None, None] * np.eye(3)


# ---------------------------------------------------------------------------
# isochoric parts


def _yeoh_scalar(p: YeohParams, x):
    """W_iso and its derivative with respect to x = |Fbar|^2 - 3."""
    w = p.c1 * x + p.c2 * x**2 + p.c3 * x**3
    dw = p.c1 + 2.0 * p.c2 * x + 3.0 * p.c3 * x**2
    return w, dw


def _ogden_phi(p: OgdenParams, s):
    """Ogden isochoric energy and its gradient in the singular values ``s``."""
    phi = np.zeros(s.shape[:-1])
    dphi = np.zeros_like(s)
    for ci, gi in zip(p.c, p.gamma):
        phi += ci * (np.sum(s**gi, axis=-1) - 3.0)
        dphi += ci * gi * s ** (gi - 1.0)
    if p.d:
        pairs = ((1, 2), (0, 2), (0, 1))
        prods = np.stack([s[..., a] * s[..., b] for a, b in pairs], axis=-1)
        for dj, de in zip(p.d, p.delta):
            pw = prods**de
            phi += dj * (np.sum(pw, axis=-1) - 3.0)
            # d/ds_k of sum over pairs containing k
            g = np.zeros_like(s)
            for m, (a, b) in enumerate(pairs):
                g[..., a] += de * pw[..., m] / s[..., a]
                g[..., b] += de * pw[..., m] / s[..., b]
            dphi += dj * g
    return phi, dphi


def energy_of_H(model: EnergyModel, H):
    """``W(I + H)``; returns ``+inf`` where ``det(I + H) <= 0``."""
    H = np.asarray(H, dtype=float)
    d = _det_minus_one(H)
    out = np.full(d.shape, np.inf)
    ok = d > -1.0
    if not np.any(ok):
        return out if out.ndim else float(out)
    Hk, dk = H[ok], d[ok]
    p = model.params
    vol = _g_of_d(dk, p.c_vol)
    if isinstance(p, YeohParams):
        a = 2.0 * _tr(Hk) + np.sum(Hk * Hk, axis=(-2, -1))  # |F|^2 - 3
        b = np.expm1(-2.0 / 3.0 * np.log1p(dk))  # J^{-2/3} - 1
        x = a + 3.0 * b + a * b
        iso, _ = _yeoh_scalar(p, x)
    else:
        F = Hk + np.eye(3)
        s = np.linalg.svd(F, compute_uv=False) * ((1.0 + dk) ** (-1.0 / 3.0))[..., None]
        iso, _ = _ogden_phi(p, s)
    out[ok] = iso + vol
    return out if out.ndim else float(out)


def w_total(model: EnergyModel, F):
    """Stored energy ``W(F)`` (extended real valued)."""
    F = np.asarray(F, dtype=float)
    return energy_of_H(model, F - np.eye(3))


def stress_of_H(model: EnergyModel, H):
    """First Piola stress ``DW(I + H)``.

    Raises ``ValueError`` if any ``det(I + H)`` is below the smoothness floor.
    """
    H = np.asarray(H, dtype=float)
    d = _det_minus_one(H)
    if np.any(1.0 + d < DET_SMOOTH_FLOOR) or not np.all(np.isfinite(d)):
        raise ValueError("DW is undefined for det F below the smoothness floor")
    F = H + np.eye(3)
    J = 1.0 + d
    C = cof3(F)
    p = model.params
    P = _dg_of_d(d, p.c_vol)[..., None, None] * C
    if isinstance(p, YeohParams):
        a = 2.0 * _tr(H) + np.sum(H * H, axis=(-2, -1))
        b = np.expm1(-2.0 / 3.0 * np.log1p(d))
        x = a + 3.0 * b + a * b
        _, s = _yeoh_scalar(p, x)
        # F - |F|^2/3 F^{-T} = dev(F F^T) F^{-T};  F F^T - I = H + H^T + H H^T
        S = _dev(H + np.swapaxes(H, -1, -2) + H @ np.swapaxes(H, -1, -2))
        P = P + (2.0 * s * (1.0 + b) / J)[..., None, None] * (S @ C)
    else:
        U, sv, Vt = np.linalg.svd(F)
        k = J ** (-1.0 / 3.0)
        sbar = sv * k[..., None]
        _, dphi = _ogden_phi(p, sbar)
        Pbar = U @ (dphi[..., :, None] * Vt)
        PF = np.sum(dphi * sbar, axis=-1) / k  # Pbar : F
        Finv_T = C / J[..., None, None]
        P = P + k[..., None, None] * (Pbar - (PF / 3.0)[..., None, None] * Finv_T)
    return P


def dw(model: EnergyModel, F):
    """First Piola derivative ``DW(F)``."""
    return stress_of_H(model, np.asarray(F, dtype=float) - np.eye(3))


def tangent_of_H(model: EnergyModel, H, step: float = 1e-6):
    """Material tangent ``D^2 W(I + H)`` as a ``(..., 3, 3, 3, 3)`` array.

    Central differences of the analytic stress; used only to build Newton
    matrices, never to evaluate energies or gradients.
    """
    H = np.asarray(H, dtype=float)
    A = np.empty(H.shape + (3, 3))
    for k in range(3):
        for l in range(3):
            E = np.zeros((3, 3))
            E[k, l] = step
            A[..., k, l] = (stress_of_H(model, H + E) - stress_of_H(model, H - E)) / (2 * step)
    # A[..., i, j, k, l] currently holds d P_ij / d F_kl
    return A


def quadform_at_identity(model: EnergyModel, B) -> float:
    """``1/2 B : D^2W(I) : B`` for symmetric ``B``.

    Closed form ``2 mu |B|^2 + (lam/2) (tr B)^2`` of the linearized density.
    For Yeoh, ``mu = c1`` and ``lam/2 = 2 c_vol - 2 c1 / 3``.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (3, 3) or np.linalg.norm(B - B.T) > 1e-14 * max(1.0, np.linalg.norm(B)):
        raise ValueError("quadform_at_identity expects a symmetric 3x3 matrix")
    mu, half_lam = lame_at_identity(model)
    return float(2.0 * mu * np.sum(B * B) + half_lam * np.trace(B) ** 2)


def second_difference_quadform(model: EnergyModel, B, t: float = 1e-3) -> float:
    """Oracle for ``1/2 B : D^2W(I) : B`` from the energy alone.

    ``(W(I + tB) - 2 W(I) + W(I - tB)) / (2 t^2)`` with ``W(I) = 0``; the
    truncation error is ``O(t^2)``.
    """
    B = np.asarray(B, dtype=float)
    wp = energy_of_H(model, t * B)
    wm = energy_of_H(model, -t * B)
    return float((wp + wm) / (2.0 * t * t))


def lame_at_identity(model: EnergyModel):
    """Return ``(mu, lam/2)`` so that ``1/2 B:D^2W(I):B = 2 mu |B|^2 + lam/2 (tr B)^2``."""
    p = model.params
    if isinstance(p, YeohParams):
        mu = p.c1
    else:
        # each isochoric term contributes (k^2 / 2) |dev B|^2 with k its exponent
        mu = 0.25 * (sum(c * g * g for c, g in zip(p.c, p.gamma)) + sum(d * e * e for d, e in zip(p.d, p.delta)))
    return mu, 2.0 * p.c_vol - 2.0 * mu / 3.0


def linear_elasticity_tensor(model: EnergyModel):
    """``D^2W(I)`` restricted to its action on symmetric gradients (``(3,3,3,3)``)."""
    mu, half_lam = lame_at_identity(model)
    I = np.eye(3)
    sym4 = 0.5 * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))
    return 4.0 * mu * sym4 + 2.0 * half_lam * np.einsum("ij,kl->ijkl", I, I)


# ---------------------------------------------------------------------------
# assumption probes


@dataclass
class ProbeReport:
    sample_count: int
    frame_violation: float
    rotation_energy_max: float
    w_min: float
    zero_set_ok: bool
    coercivity_C: float
    growth_exponents: tuple
    growth_C: float
    empirical_vol_exponent: float
    blowup_monotone: bool
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        d["growth_exponents"] = list(self.growth_exponents)
        return d


def growth_exponents(model: EnergyModel, r: float = 2.0):
    """Exponents ``(s, q, r)`` for the lower bound ``C'(|F|^s + |cof F|^q + det^r - 1)``."""
    p = model.params
    if isinstance(p, YeohParams):
        # W >= a1 |F|^3 - a2 and |cof F| <= 2 |F|^2
        return 3.0, 1.5, r
    gamma = max(p.gamma) if p.gamma else 2.0
    delta = max(p.delta) if p.delta else 3.0
    s = 3.0 * gamma * r / (3.0 * r + gamma)
    q = 3.0 * delta * r / (2.0 * delta + 3.0 * r)
    return s, q, r


def _random_deformations(rng, n, scale_lo=1e-3, scale_hi=1.0):
    R = np.array([Rot3.random(rng).matrix for _ in range(n)])
    s = np.exp(rng.uniform(np.log(scale_lo), np.log(scale_hi), size=n))
    X = rng.normal(size=(n, 3, 3)) / 3.0
    F = R @ (np.eye(3) + s[:, None, None] * X)
    keep = det3(F) > 0
    return F[keep]


def probe_assumptions(model: EnergyModel, sample_count: int = 1000, seed: int = 0) -> ProbeReport:
    """Sample the density and report how well the structural assumptions hold."""
    rng = np.random.default_rng(seed)
    failures = []

    F = _random_deformations(rng, sample_count)
    Rs = np.array([Rot3.random(rng).matrix for _ in range(len(F))])
    W = w_total(model, F)
    WR = w_total(model, Rs @ F)
    frame = float(np.max(np.abs(WR - W) / (1.0 + np.abs(W))))
    if frame > 1e-10:
        failures.append(f"frame indifference violated by {frame:.3e}")

    rot_energy = float(np.max(np.abs(w_total(model, Rs[: min(100, len(Rs))]))))
    if rot_energy > 1e-12:
        failures.append(f"W(R) = {rot_energy:.3e} on rotations")

    dist = dist_SO3(F)
    w_min = float(np.min(W))
    if w_min < 0:
        failures.append(f"negative energy {w_min:.3e}")
    zero_set_ok = bool(np.all((W > 1e-12) | (dist <= 1e-8)))
    if not zero_set_ok:
        failures.append("W vanishes away from SO(3)")

    near = (dist <= 0.5) & (dist > 0)
    coerc = float(np.min(W[near] / dist[near] ** 2)) if np.any(near) else float("nan")
    if not coerc > 0:
        failures.append("no positive coercivity constant on samples with dist <= 0.5")

    # growth from below on a wider cloud including large deformations
    Fw = _random_deformations(rng, sample_count, 1e-2, 10.0)
    Ww = w_total(model, Fw)
    s_exp, q_exp, r_exp = growth_exponents(model)
    rhs = (
        np.sqrt(np.sum(Fw * Fw, axis=(-2, -1))) ** s_exp
        + np.sqrt(np.sum(cof3(Fw) ** 2, axis=(-2, -1))) ** q_exp
        + det3(Fw) ** r_exp
        - 1.0
    )
    pos = rhs > 0
    growth = float(np.min(Ww[pos] / rhs[pos])) if np.any(pos) else float("nan")
    if not growth > 0:
        failures.append("no positive growth constant")

    t = np.array([1e3, 1e4])
    gv = w_vol(t, model.c_vol)
    emp_r = float(np.log(gv[1] / gv[0]) / np.log(t[1] / t[0]))

    dets = np.logspace(-3, -12, 40)
    Wb = w_total(model, np.array([np.diag([t_, 1.0, 1.0]) for t_ in dets]))
    blowup = bool(np.all(np.diff(Wb) > 0) and w_total(model, np.diag([-1.0, 1.0, 1.0])) == np.inf)
    if not blowup:
        failures.append("energy does not blow up monotonically as det F -> 0+")

    return ProbeReport(
        sample_count=int(len(F)),
        frame_violation=frame,
        rotation_energy_max=rot_energy,
        w_min=w_min,
        zero_set_ok=zero_set_ok,
        coercivity_C=coerc,
        growth_exponents=(s_exp, q_exp, r_exp),
        growth_C=growth,
        empirical_vol_exponent=emp_r,
        blowup_monotone=blowup,
        failures=failures,
    )
