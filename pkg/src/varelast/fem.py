"""Structured simplicial meshes and first-order vector fields.

The cylinder and disc meshes are polar: a centre vertex plus ``n_r`` rings,
ring ``i`` carrying ``i * n_theta`` equally spaced vertices at radius
``(i / n_r) ** grading``.  The cylinder extrudes the disc triangulation in
``n_z`` layers and splits every prism into three tetrahedra with the
index-ordering rule, which keeps shared quadrilateral faces conforming.

Fields are continuous piecewise-linear, so gradients are constant per cell and
every quadratic quantity built from ``grad u`` (strain norms, average curl,
stiffness) is integrated exactly by a one-point rule.  Only the load pairing
needs genuine quadrature; see :func:`load_quadrature`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_legendre

from .tensor3 import Rot3, skew_of

# ---------------------------------------------------------------------------
# meshes


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    domain: str
    grading: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)
        if np.any(self.signed_volumes <= 0):
            raise ValueError("mesh has non-positively oriented cells")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_vertices * self.dim

    @cached_property
    def _edges(self):
        X = self.vertices[self.cells]
        return X[:, 1:, :] - X[:, :1, :]

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self._edges) / math.factorial(self.dim)

    @property
    def volumes(self) -> np.ndarray:
        return self.signed_volumes

    @cached_property
    def volume(self) -> float:
        return float(math.fsum(self.volumes))

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """``(n_cells, dim + 1, dim)`` gradients of the barycentric coordinates."""
        Einv = np.linalg.inv(self._edges)  # columns are grad lambda_1..d
        g = np.swapaxes(Einv, 1, 2)
        g0 = -g.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g], axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    # --- linear operators on flattened fields (vertex-major, index a*d + i)

    @cached_property
    def grad_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal values to per-cell gradients ``(cell, i, j)`` flattened."""
        d, m = self.dim, self.n_cells
        G = self.basis_gradients
        rows, cols, vals = [], [], []
        cell = np.arange(m)
        for a in range(d + 1):
            node = self.cells[:, a]
            for i in range(d):
                for j in range(d):
                    rows.append(cell * d * d + i * d + j)
                    cols.append(node * d + i)
                    vals.append(G[:, a, j])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m * d * d, self.n_dofs),
        )

    def _cell_gram(self, P: np.ndarray) -> sp.csr_matrix:
        """``D^T diag(vol) (P applied per cell) D`` for a fixed ``(d*d, d*d)`` pattern ``P``."""
        d = self.dim
        blocks = sp.kron(sp.diags(self.volumes), sp.csr_matrix(P))
        D = self.grad_operator
        return (D.T @ blocks @ D).tocsr()

    @cached_property
    def strain_gram(self) -> sp.csr_matrix:
        """Matrix of ``u -> int |E(u)|^2``."""
        d = self.dim
        S = _sym_projector(d)
        return self._cell_gram(S)

    @cached_property
    def gradient_gram(self) -> sp.csr_matrix:
        """Matrix of ``u -> int |grad u|^2``."""
        return self._cell_gram(np.eye(self.dim**2))

    @cached_property
    def divergence_gram(self) -> sp.csr_matrix:
        d = self.dim
        t = np.eye(d).ravel()
        return self._cell_gram(np.outer(t, t))

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix for vector fields."""
        d, k = self.dim, self.dim + 1
        local = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
        rows = np.repeat(self.cells, k, axis=1).ravel()
        cols = np.tile(self.cells, (1, k)).ravel()
        vals = (self.volumes[:, None] * local.ravel()[None, :]).ravel()
        Ms = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_vertices,) * 2)
        return sp.kron(Ms, sp.eye(d)).tocsr()

    @cached_property
    def h1_gram(self) -> sp.csr_matrix:
        return (self.mass_matrix + self.gradient_gram).tocsr()

    @cached_property
    def curl_operator(self) -> np.ndarray:
        """Dense ``(3, n_dofs)`` (or ``(1, n_dofs)`` in 2D) matrix of ``u -> int curl u``."""
        d = self.dim
        # integrated gradient entries (i, j) as rows over dofs
        D = self.grad_operator.tocoo()
        integ = np.zeros((d * d, self.n_dofs))
        w = self.volumes[D.row // (d * d)]
        np.add.at(integ, (D.row % (d * d), D.col), w * D.data)
        integ = integ.reshape(d, d, -1)
        if d == 3:
            rows = [
                integ[2, 1] - integ[1, 2],
                integ[0, 2] - integ[2, 0],
                integ[1, 0] - integ[0, 1],
            ]
        else:
            rows = [integ[1, 0] - integ[0, 1]]
        return np.array(rows)

    @cached_property
    def mean_operator(self) -> np.ndarray:
        """Dense ``(d, n_dofs)`` matrix of ``u -> int u``."""
        d = self.dim
        lumped = np.zeros(self.n_vertices)
        np.add.at(lumped, self.cells.ravel(), np.repeat(self.volumes / (d + 1), d + 1))
        M = np.zeros((d, self.n_dofs))
        for i in range(d):
            M[i, i::d] = lumped
        return M

    @cached_property
    def rigid_constraints(self) -> np.ndarray:
        """Rows of ``int u = 0`` and ``int curl u = 0`` (removes the rigid kernel)."""
        return np.vstack([self.mean_operator, self.curl_operator])

    def dump(self, path) -> None:
        """Plain-text dump: header, vertex list, cell list."""
        with open(path, "w") as fh:
            fh.write(f"# domain {self.domain} dim {self.dim} grading {self.grading}\n")
            fh.write(f"vertices {self.n_vertices}\n")
            for v in self.vertices:
                fh.write(" ".join(f"{c:.17g}" for c in v) + "\n")
            fh.write(f"cells {self.n_cells}\n")
            for c in self.cells:
                fh.write(" ".join(str(int(i)) for i in c) + "\n")


def _sym_projector(d):
    P = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            P[i * d + j, i * d + j] += 0.5
            P[i * d + j, j * d + i] += 0.5
    return P


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        header = fh.readline().split()
        domain, dim, grading = header[2], int(header[4]), float(header[6])
        nv = int(fh.readline().split()[1])
        V = np.array([[float(x) for x in fh.readline().split()] for _ in range(nv)])
        nc = int(fh.readline().split()[1])
        C = np.array([[int(x) for x in fh.readline().split()] for _ in range(nc)])
    assert V.shape[1] == dim
    return Mesh(V, C, domain, grading)


def _ring_sizes(n_r, n_theta):
    return [1] + [i * n_theta for i in range(1, n_r + 1)]


def _polar_triangulation(n_r: int, n_theta: int, grading: float):
    sizes = _ring_sizes(n_r, n_theta)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    pts = [np.zeros((1, 2))]
    radii = [(i / n_r) ** grading for i in range(n_r + 1)]
    for i in range(1, n_r + 1):
        m = sizes[i]
        ang = 2 * np.pi * np.arange(m) / m
        pts.append(radii[i] * np.column_stack([np.cos(ang), np.sin(ang)]))
    P = np.vstack(pts)
    # the outermost ring sits exactly on the unit circle
    outer = slice(offsets[n_r], offsets[n_r + 1])
    P[outer] /= np.linalg.norm(P[outer], axis=1, keepdims=True)

    tris = []
    band = []
    m1 = sizes[1]
    for k in range(m1):
        tris.append((0, offsets[1] + k, offsets[1] + (k + 1) % m1))
        band.append(1)
    for i in range(2, n_r + 1):
        mi, mo = sizes[i - 1], sizes[i]
        a = b = 0
        while a < mi or b < mo:
            ta = (a + 1) / mi
            tb = (b + 1) / mo
            ia, ia1 = offsets[i - 1] + a % mi, offsets[i - 1] + (a + 1) % mi
            ib, ib1 = offsets[i] + b % mo, offsets[i] + (b + 1) % mo
            if a < mi and (b >= mo or ta < tb):
                tris.append((ia, ia1, ib))
                a += 1
            else:
                tris.append((ia, ib1, ib))
                b += 1
            band.append(i)
    T = np.array(tris, dtype=np.int64)
    # orient counter-clockwise
    e1 = P[T[:, 1]] - P[T[:, 0]]
    e2 = P[T[:, 2]] - P[T[:, 0]]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    return P, T, np.array(band), np.array(radii)


def _extrude(P2, T2, z_levels):
    n2 = len(P2)
    nz = len(z_levels) - 1
    V = np.vstack([np.column_stack([P2, np.full(n2, z)]) for z in z_levels])
    Ts = np.sort(T2, axis=1)
    layers = []
    for k in range(nz):
        a, b, c = (Ts[:, 0] + k * n2, Ts[:, 1] + k * n2, Ts[:, 2] + k * n2)
        A, B, C = a + n2, b + n2, c + n2
        prism = [np.column_stack(t) for t in ((a, b, c, A), (b, c, A, B), (c, A, B, C))]
        layers.append(np.stack(prism, axis=1))  # (n_tri, 3, 4)
    # cell index = (layer * n_tri + triangle) * 3 + sub-tet
    cells = np.concatenate(layers).reshape(-1, 4)
    X = V[cells]
    vol = np.linalg.det(X[:, 1:] - X[:, :1])
    neg = vol < 0
    cells[neg] = cells[neg][:, [0, 2, 1, 3]]
    return V, cells


def build_disc_mesh(n_r: int, n_theta: int, grading_exponent: float = 2.0) -> Mesh:
    if n_r < 1 or n_theta < 3:
        raise ValueError("disc mesh needs n_r >= 1 and n_theta >= 3")
    P, T, band, radii = _polar_triangulation(n_r, n_theta, grading_exponent)
    return Mesh(P, T, "disc", grading_exponent,
                meta=dict(n_r=n_r, n_theta=n_theta, radii=radii, band=band))


def build_cylinder_mesh(n_r: int, n_theta: int, n_z: int, grading_exponent: float = 2.0,
                        height: float = 1.0) -> Mesh:
    """Tetrahedral mesh of ``{x^2 + y^2 < 1, 0 < z < height}``."""
    if min(n_r, n_theta, n_z) < 2:
        raise ValueError("cylinder mesh needs n_r, n_theta, n_z >= 2")
    if not grading_exponent > 0:
        raise ValueError("grading exponent must be positive")
    P, T, band, radii = _polar_triangulation(n_r, n_theta, grading_exponent)
    z = np.linspace(0.0, height, n_z + 1)
    V, cells = _extrude(P, T, z)
    return Mesh(V, cells, "cylinder", grading_exponent,
                meta=dict(n_r=n_r, n_theta=n_theta, n_z=n_z, height=height, radii=radii,
                          band=band, tri2d=T, pts2d=P, z=z))


def build_box_mesh(nx: int, ny: int, nz: int, lower=(-0.5, -0.5, -0.5), upper=(0.5, 0.5, 0.5)) -> Mesh:
    if min(nx, ny, nz) < 1:
        raise ValueError("box mesh needs at least one cell per direction")
    xs = np.linspace(lower[0], upper[0], nx + 1)
    ys = np.linspace(lower[1], upper[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    T = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    z = np.linspace(lower[2], upper[2], nz + 1)
    V, cells = _extrude(P, T, z)
    return Mesh(V, cells, "box", 1.0, meta=dict(tri2d=T, pts2d=P, z=z))


# ---------------------------------------------------------------------------
# fields


@dataclass(eq=False)
class VectorField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = self.mesh.dim
        if v.size != self.mesh.n_vertices * d:
            raise ValueError("coefficient count does not match mesh")
        self.values = v.reshape(self.mesh.n_vertices, d)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite coefficients")

    @classmethod
    def zeros(cls, mesh: Mesh) -> "VectorField":
        return cls(mesh, np.zeros((mesh.n_vertices, mesh.dim)))

    @classmethod
    def interpolate(cls, mesh: Mesh, fn: Callable) -> "VectorField":
        return cls(mesh, np.asarray(fn(mesh.vertices), dtype=float))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def cell_gradients(self) -> np.ndarray:
        return np.einsum("cai,caj->cij", self.values[self.mesh.cells], self.mesh.basis_gradients)

    def __add__(self, other):
        return VectorField(self.mesh, self.values + _vals(other))

    def __sub__(self, other):
        return VectorField(self.mesh, self.values - _vals(other))

    def __mul__(self, a: float):
        return VectorField(self.mesh, a * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.mesh, -self.values)


def _vals(x):
    return x.values if isinstance(x, VectorField) else np.asarray(x)


def strain_L2_sq(u: VectorField) -> float:
    """``int |E(u)|^2`` (exact for P1 fields)."""
    Gc = u.cell_gradients()
    E = 0.5 * (Gc + np.swapaxes(Gc, 1, 2))
    return float(math.fsum(u.mesh.volumes * np.sum(E * E, axis=(1, 2))))


def average_curl(u: VectorField) -> np.ndarray:
    """``int curl u`` (exact for P1 fields)."""
    return u.mesh.curl_operator @ u.flat


def project_zero_avg_curl(u: VectorField, R: Optional[Rot3] = None) -> VectorField:
    """Subtract an infinitesimal rotation so that ``int curl (R^T u) = 0``.

    With ``w = |Omega|^-1 int curl(R^T u)`` the result is ``u - R (w x X) / 2``,
    which leaves ``E(R^T u)`` untouched.
    """
    mesh = u.mesh
    Rm = np.eye(3) if R is None else np.asarray(R)
    v = u.values @ Rm  # rows: R^T u(x)
    w = (mesh.curl_operator @ v.ravel()) / mesh.volume
    corr = 0.5 * mesh.vertices @ skew_of(w).T
    return VectorField(mesh, u.values - corr @ Rm.T)


# ---------------------------------------------------------------------------
# loads


@dataclass(frozen=True)
class LoadFunctional:
    """``L(u) = int (f . u + G : grad u)`` with an optional output transform.

    ``transform`` multiplies the density values, so ``rotate_load`` can build
    ``R^T L`` without wrapping closures.
    """

    f: Optional[Callable] = None
    G: Optional[Callable] = None
    name: str = "custom"
    transform: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: float = 1.0

    def body_force(self, x):
        x = np.atleast_2d(x)
        if self.f is None:
            return np.zeros_like(x)
        d = x.shape[1]
        return self.scale * np.asarray(self.f(x)) @ self.transform[:d, :d].T

    def stress_density(self, x):
        x = np.atleast_2d(x)
        d = x.shape[1]
        if self.G is None:
            return np.zeros((len(x), d, d))
        return self.scale * np.einsum("ij,qjk->qik", self.transform[:d, :d], self.G(x))

    @property
    def is_zero(self) -> bool:
        return (self.f is None and self.G is None) or self.scale == 0.0

    def scaled(self, a: float) -> "LoadFunctional":
        return LoadFunctional(self.f, self.G, self.name, self.transform, self.scale * a)


def zero_load() -> LoadFunctional:
    return LoadFunctional(name="zero")


def constant_load(vec) -> LoadFunctional:
    vec = np.asarray(vec, dtype=float)
    return LoadFunctional(f=lambda x: np.broadcast_to(vec[: x.shape[1]], x.shape).copy(),
                          name="constant")


@dataclass(eq=False)
class LoadQuadrature:
    kind: str
    points: np.ndarray
    weights: np.ndarray
    cells: np.ndarray
    interp: sp.csr_matrix  # (n_points, n_vertices) barycentric weights


_TET_O2 = (
    np.array([[0.5854101966249685, 0.1381966011250105, 0.1381966011250105, 0.1381966011250105]])
    .repeat(4, axis=0)
)
for _k in range(4):
    _TET_O2[_k] = np.roll(_TET_O2[0], _k)
_TRI_O2 = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


def _cell_quadrature(mesh: Mesh) -> LoadQuadrature:
    bary = _TET_O2 if mesh.dim == 3 else _TRI_O2
    nq = len(bary)
    X = mesh.vertices[mesh.cells]
    pts = np.einsum("qa,cai->cqi", bary, X).reshape(-1, mesh.dim)
    w = np.repeat(mesh.volumes / nq, nq)
    cells = np.repeat(np.arange(mesh.n_cells), nq)
    rows = np.repeat(np.arange(len(pts)), mesh.dim + 1)
    cols = mesh.cells[cells].ravel()
    vals = np.tile(bary, (mesh.n_cells, 1)).ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), mesh.n_vertices))
    return LoadQuadrature("cells", pts, w, cells, M)


def _barycentric(X, p):
    """Barycentric coordinates of points ``p (n, d)`` in simplices ``X (n, d+1, d)``."""
    E = X[:, 1:, :] - X[:, :1, :]
    lam = np.linalg.solve(np.swapaxes(E, 1, 2), (p - X[:, 0, :])[..., None])[..., 0]
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


def _locate_2d(P2, T2, band, pts, pts_band, n_r):
    """Triangle index for each point, restricted to neighbouring radial bands.

    Points outside every candidate (the circular caps beyond the polygon) are
    assigned to the candidate with the largest minimal barycentric coordinate,
    i.e. the field is extended linearly from the nearest boundary triangle.
    """
    tri = np.empty(len(pts), dtype=np.int64)
    bary = np.empty((len(pts), 3))
    X = P2[T2]
    for b in range(1, n_r + 1):
        sel = np.nonzero(pts_band == b)[0]
        if sel.size == 0:
            continue
        cand = np.nonzero((band >= b - 1) & (band <= b + 1))[0]
        E = X[cand, 1:, :] - X[cand, :1, :]
        Minv = np.linalg.inv(np.swapaxes(E, 1, 2))  # (nc, 2, 2)
        rel = pts[sel][:, None, :] - X[cand, 0, :][None, :, :]
        lam = np.einsum("cij,pcj->pci", Minv, rel)
        full = np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)
        score = full.min(axis=2)
        best = np.argmax(score, axis=1)
        tri[sel] = cand[best]
        bary[sel] = full[np.arange(sel.size), best]
    return tri, bary


def _exact_polar_quadrature(mesh: Mesh, n_r_gauss=4, n_t_gauss=3, n_z_gauss=2) -> LoadQuadrature:
    """Quadrature over the exact disc or cylinder in polar coordinates.

    Every radial band is split into ``2 m`` equal sectors (``m`` = vertex count
    of its outer ring) with Gauss-Legendre points in ``r`` and ``theta``.  The
    composite angular rule integrates trigonometric polynomials of degree
    below ``2 m`` exactly, so pairings of radial loads with globally affine
    fields (rigid motions, ``(R - I) x``, the astatic matrix) are exact up to
    rounding.  No node lies on the axis.
    """
    meta = mesh.meta
    n_r, n_theta = meta["n_r"], meta["n_theta"]
    radii = meta["radii"]
    gr, wr = roots_legendre(n_r_gauss)
    gt, wt = roots_legendre(n_t_gauss)
    pts, wts, bands = [], [], []
    for b in range(1, n_r + 1):
        r0, r1 = radii[b - 1], radii[b]
        r = 0.5 * (r1 - r0) * gr + 0.5 * (r1 + r0)
        w_r = 0.5 * (r1 - r0) * wr * r
        S = 2 * b * n_theta
        dth = 2 * np.pi / S
        th = (np.arange(S)[:, None] + 0.5 * (gt[None, :] + 1.0)) * dth
        w_t = np.broadcast_to(0.5 * dth * wt, th.shape)
        R, TH = np.meshgrid(r, th.ravel(), indexing="ij")
        WR, WT = np.meshgrid(w_r, w_t.ravel(), indexing="ij")
        pts.append(np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()]))
        wts.append((WR * WT).ravel())
        bands.append(np.full(R.size, b))
    p2, w2, b2 = np.vstack(pts), np.concatenate(wts), np.concatenate(bands)

    if mesh.dim == 2:
        tri, bary = _locate_2d(mesh.vertices, mesh.cells, meta["band"], p2, b2, n_r)
        rows = np.repeat(np.arange(len(p2)), 3)
        M = sp.csr_matrix((bary.ravel(), (rows, mesh.cells[tri].ravel())),
                          shape=(len(p2), mesh.n_vertices))
        return LoadQuadrature("exact", p2, w2, tri, M)

    P2, T2 = meta["pts2d"], meta["tri2d"]
    tri, _ = _locate_2d(P2, T2, meta["band"], p2, b2, n_r)
    zl = meta["z"]
    gz, wz = roots_legendre(n_z_gauss)
    n_tri = len(T2)
    all_pts, all_w, all_cell, all_bary = [], [], [], []
    for k in range(len(zl) - 1):
        z0, z1 = zl[k], zl[k + 1]
        for zq, wq in zip(0.5 * (z1 - z0) * gz + 0.5 * (z0 + z1), 0.5 * (z1 - z0) * wz):
            p3 = np.column_stack([p2, np.full(len(p2), zq)])
            # three tetrahedra of the prism (layer k, triangle tri)
            cand = (k * n_tri + tri)[:, None] * 3 + np.arange(3)[None, :]
            X = mesh.vertices[mesh.cells[cand]]  # (n, 3, 4, 3)
            lam = np.stack([_barycentric(X[:, s], p3) for s in range(3)], axis=1)
            best = np.argmax(lam.min(axis=2), axis=1)
            idx = np.arange(len(p3))
            all_pts.append(p3)
            all_w.append(w2 * wq)
            all_cell.append(cand[idx, best])
            all_bary.append(lam[idx, best])
    pts3 = np.vstack(all_pts)
    cells = np.concatenate(all_cell)
    bary = np.vstack(all_bary)
    rows = np.repeat(np.arange(len(pts3)), 4)
    M = sp.csr_matrix((bary.ravel(), (rows, mesh.cells[cells].ravel())),
                      shape=(len(pts3), mesh.n_vertices))
    return LoadQuadrature("exact", pts3, np.concatenate(all_w), cells, M)


_QUAD_CACHE: dict = {}


def load_quadrature(mesh: Mesh, kind: Optional[str] = None) -> LoadQuadrature:
    """Quadrature used to pair loads with fields.

    ``"cells"``: order-2 rule on every cell of the polyhedral domain.
    ``"exact"``: polar rule on the true disc/cylinder (default for those).
    """
    if kind is None:
        kind = "exact" if mesh.domain in ("cylinder", "disc") else "cells"
    key = (id(mesh), kind)
    if key not in _QUAD_CACHE:
        if kind == "cells":
            q = _cell_quadrature(mesh)
        elif kind == "exact":
            if mesh.domain not in ("cylinder", "disc"):
                raise ValueError("exact-domain quadrature needs a polar mesh")
            q = _exact_polar_quadrature(mesh)
        else:
            raise ValueError(f"unknown quadrature kind {kind!r}")
        _QUAD_CACHE[key] = (mesh, q)  # keep mesh alive so the id stays unique
    return _QUAD_CACHE[key][1]


class QuadratureFailure(RuntimeError):
    pass


def load_vector(L: LoadFunctional, mesh: Mesh, kind: Optional[str] = None) -> np.ndarray:
    """Nodal vector ``b`` with ``L(u) = b . u`` for every P1 field ``u``."""
    d = mesh.dim
    if L.is_zero:
        return np.zeros(mesh.n_dofs)
    q = load_quadrature(mesh, kind)
    b = np.zeros((mesh.n_vertices, d))
    if L.f is not None:
        f = L.body_force(q.points)
        if not np.all(np.isfinite(f)):
            raise QuadratureFailure("load density is not finite at a quadrature node")
        b += q.interp.T @ (q.weights[:, None] * f)
    if L.G is not None:
        G = L.stress_density(q.points)
        if not np.all(np.isfinite(G)):
            raise QuadratureFailure("load stress density is not finite at a quadrature node")
        grads = mesh.basis_gradients[q.cells]  # (n, d+1, d)
        contrib = np.einsum("qij,qaj->qai", G * q.weights[:, None, None], grads)
        np.add.at(b, mesh.cells[q.cells], contrib)
    return b.ravel()


def apply_load(L: LoadFunctional, u: VectorField, kind: Optional[str] = None) -> float:
    return float(load_vector(L, u.mesh, kind) @ u.flat)


def rigid_fields(mesh: Mesh):
    """Translations ``e_i`` followed by infinitesimal rotations ``W_k x`` (3D)."""
    d = mesh.dim
    out = []
    for i in range(d):
        v = np.zeros((mesh.n_vertices, d))
        v[:, i] = 1.0
        out.append(VectorField(mesh, v))
    if d == 3:
        for k in range(3):
            a = np.zeros(3)
            a[k] = 1.0
            out.append(VectorField(mesh, mesh.vertices @ skew_of(a).T))
    else:
        out.append(VectorField(mesh, np.column_stack([-mesh.vertices[:, 1], mesh.vertices[:, 0]])))
    return out


@dataclass
class EquilibrationReport:
    translation_residuals: np.ndarray
    rotation_residuals: np.ndarray
    scale: float
    tol: float

    @property
    def max_residual(self) -> float:
        return float(max(np.max(np.abs(self.translation_residuals)),
                         np.max(np.abs(self.rotation_residuals))))

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol * self.scale


def load_scale(L: LoadFunctional, mesh: Mesh, kind=None) -> float:
    """Size of ``L`` used for relative tolerances: ``int |f| (1 + |x|) + int |G|``."""
    if L.is_zero:
        return 0.0
    q = load_quadrature(mesh, kind)
    s = 0.0
    if L.f is not None:
        s += math.fsum(q.weights * np.linalg.norm(L.body_force(q.points), axis=1)
                       * (1.0 + np.linalg.norm(q.points, axis=1)))
    if L.G is not None:
        s += math.fsum(q.weights * np.linalg.norm(L.stress_density(q.points), axis=(1, 2)))
    return s


def check_equilibrated(L: LoadFunctional, mesh: Mesh, tol: float = 1e-8, kind=None) -> EquilibrationReport:
    b = load_vector(L, mesh, kind)
    vals = np.array([b @ r.flat for r in rigid_fields(mesh)])
    d = mesh.dim
    return EquilibrationReport(vals[:d], vals[d:], load_scale(L, mesh, kind), tol)


def dual_norm_estimate(L: LoadFunctional, mesh: Mesh, kind=None) -> float:
    """``max L(u)`` over discrete ``u`` with ``||u||_{H^1} = 1``, i.e. ``sqrt(b^T G^-1 b)``."""
    b = load_vector(L, mesh, kind)
    if not np.any(b):
        return 0.0
    x = spla.spsolve(mesh.h1_gram.tocsc(), b)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular H1 Gram matrix")
    return float(np.sqrt(max(b @ x, 0.0)))


# ---------------------------------------------------------------------------
# Korn constant


def constrained_solver(K: sp.spmatrix, C: np.ndarray):
    """Factorize the saddle-point system ``[[K, C^T], [C, 0]]``.

    Returns ``solve(rhs) -> (x, multipliers)`` for ``K x + C^T mu = rhs``,
    ``C x = 0``.
    """
    n, m = K.shape[0], C.shape[0]
    Cs = sp.csr_matrix(C)
    A = sp.bmat([[K, Cs.T], [Cs, None]], format="csc")
    lu = spla.splu(A)

    def solve(rhs, crhs=None):
        full = np.zeros(n + m)
        full[:n] = rhs
        if crhs is not None:
            full[n:] = crhs
        x = lu.solve(full)
        return x[:n], x[n:]

    return solve


def _korn_direct(mesh: Mesh) -> float:
    A = mesh.strain_gram
    B = mesh.gradient_gram
    solve = constrained_solver(A, mesh.rigid_constraints)
    n = mesh.n_dofs
    op = spla.LinearOperator((n, n), matvec=lambda x: solve(np.asarray(x).ravel())[0], dtype=float)
    rng = np.random.default_rng(0)
    v0 = solve(rng.normal(size=n))[0]
    vals = spla.eigsh(A, k=1, M=B, sigma=0.0, OPinv=op, which="LM", v0=v0,
                      return_eigenvectors=False, tol=1e-12)
    return float(vals[0])


def _korn_lobpcg(mesh: Mesh, tol: float = 1e-9) -> float:
    """Preconditioned block eigensolver for meshes too large to factorize.

    Both quadratic forms vanish on translations, so ``B`` is lifted by the
    Euclidean projector onto them; the search space is then kept
    ``B``-orthogonal to translations and rotations, and ``B``-orthogonality to
    ``W x`` is exactly ``int curl u . w = 0``.
    """
    import pyamg

    n = mesh.n_dofs
    A = mesh.strain_gram
    B = mesh.gradient_gram
    rig = np.column_stack([r.flat for r in rigid_fields(mesh)])
    T = np.linalg.qr(rig[:, :3])[0]
    Rw = rig[:, 3:] - T @ (T.T @ rig[:, 3:])

    def lifted(x):
        return B @ x + T @ (T.T @ x)

    Bop = spla.LinearOperator((n, n), matvec=lifted, matmat=lifted, dtype=float)
    ml = pyamg.smoothed_aggregation_solver((A + 1e-3 * mesh.mass_matrix).tocsr(), B=rig)
    X = np.random.default_rng(0).normal(size=(n, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        lam, _ = spla.lobpcg(A, X, B=Bop, M=ml.aspreconditioner(), Y=np.column_stack([T, Rw]),
                             largest=False, tol=tol, maxiter=2000)
    return float(np.min(lam))


KORN_DIRECT_MAX_DOFS = 20000


def korn_rayleigh_min(mesh: Mesh, method: str = "auto") -> float:
    """Smallest ``int|E u|^2 / int|grad u|^2`` over ``{int u = 0, int curl u = 0}``.

    ``direct``: shift-invert Lanczos with the constrained inverse of ``A`` as
    the spectral operator, so rigid motions never enter its range.
    ``lobpcg``: AMG-preconditioned block iteration (see ``_korn_lobpcg``).
    ``auto`` picks ``direct`` up to ``KORN_DIRECT_MAX_DOFS`` unknowns.
    """
    if method == "auto":
        method = "direct" if mesh.n_dofs <= KORN_DIRECT_MAX_DOFS else "lobpcg"
    if method == "direct":
        return _korn_direct(mesh)
    if method == "lobpcg":
        return _korn_lobpcg(mesh)
    raise ValueError(f"unknown eigensolver {method!r}")


def korn_constant_estimate(mesh: Mesh, method: str = "auto") -> float:
    """Discrete estimate of ``Z`` in ``int|grad u|^2 <= Z int|E u|^2`` on zero-average-curl fields."""
    return 1.0 / korn_rayleigh_min(mesh, method)
