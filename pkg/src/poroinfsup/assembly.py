"""Finite element operators of the four-field Biot system.

Displacement: continuous vector P2.  Pressure, total pressure and total
fluid content: continuous P1.  All element integrals use a symmetric
7-point triangle rule, exact for polynomials of degree 5.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .linalg import SaddleFactorization
from .mesh import Mesh, MeshError
from .problem import ESSENTIAL, NATURAL, BoundaryConfig, MaterialParams, SpaceConfig, gamma

_a1, _b1 = (9 - 2 * np.sqrt(15)) / 21, (6 + np.sqrt(15)) / 21
_a2, _b2 = (9 + 2 * np.sqrt(15)) / 21, (6 - np.sqrt(15)) / 21
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
QUAD_WEIGHTS = np.array([9 / 40] + [(155 + np.sqrt(15)) / 1200] * 3 + [(155 - np.sqrt(15)) / 1200] * 3)
QUAD_DEGREE = 5

_gl_x, _gl_w = np.polynomial.legendre.leggauss(4)
EDGE_S = 0.5 * (_gl_x + 1.0)
EDGE_W = 0.5 * _gl_w


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points; vertices first, then the
    edge nodes opposite vertex 0, 1, 2."""
    L0, L1, L2 = bary.T
    return np.stack([
        L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
        4 * L1 * L2, 4 * L2 * L0, 4 * L0 * L1,
    ], axis=-1)


class ElementData:
    """Per-mesh geometric quantities shared by every assembly routine."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        areas = mesh.signed_areas
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise MeshError(f"assembly failed: degenerate element {int(bad[0])}")
        self.areas = areas
        p = mesh.vertices[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        # gradients of the barycentric coordinates, (nt, 3, 2)
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        self.grad_bary = np.stack([gx, gy], axis=-1) / (2 * areas)[:, None, None]
        self.qpoints = np.einsum("qk,tkd->tqd", QUAD_BARY, p)
        self.wdet = areas[:, None] * QUAD_WEIGHTS[None, :]
        self.p1_values = QUAD_BARY
        self.p2_values = p2_values(QUAD_BARY)
        gb = self.grad_bary
        Lq = QUAD_BARY
        grads = np.empty((mesh.n_triangles, len(QUAD_WEIGHTS), 6, 2))
        for i in range(3):
            grads[:, :, i] = (4 * Lq[None, :, i, None] - 1) * gb[:, None, i]
        for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
            grads[:, :, 3 + k] = 4 * (Lq[None, :, j, None] * gb[:, None, i] + Lq[None, :, i, None] * gb[:, None, j])
        self.p2_grads = grads
        self.p2_dofs = np.hstack([mesh.triangles, mesh.n_vertices + mesh.edge_index_of_triangles])


_ELEMENT_CACHE: "weakref.WeakKeyDictionary[Mesh, ElementData]" = weakref.WeakKeyDictionary()


def element_data(mesh: Mesh) -> ElementData:
    data = _ELEMENT_CACHE.get(mesh)
    if data is None:
        data = _ELEMENT_CACHE[mesh] = ElementData(mesh)
    return data


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


@dataclass(frozen=True)
class DofMap:
    """Degrees of freedom of the four fields.

    Displacement coefficients are blocked: all x-components of the scalar
    P2 nodes, then all y-components.  Scalar fields live on mesh vertices.
    ``u_free``/``p_free`` index the full coefficient vectors.
    """

    n_vertices: int
    n_p2: int
    u_free: np.ndarray
    p_free: np.ndarray
    u_essential: np.ndarray
    p_essential: np.ndarray
    p2_nodes: np.ndarray

    @property
    def n_u(self) -> int:
        return len(self.u_free)

    @property
    def n_p(self) -> int:
        return len(self.p_free)

    @property
    def n_s(self) -> int:
        return self.n_vertices

    def expand_u(self, u: np.ndarray) -> np.ndarray:
        """Full (2, n_p2) nodal displacement from free coefficients."""
        full = np.zeros(u.shape[:-1] + (2 * self.n_p2,))
        full[..., self.u_free] = u
        return full.reshape(u.shape[:-1] + (2, self.n_p2))

    def expand_p(self, p: np.ndarray) -> np.ndarray:
        full = np.zeros(p.shape[:-1] + (self.n_vertices,))
        full[..., self.p_free] = p
        return full


def build_dofmap(mesh: Mesh, bc: BoundaryConfig) -> DofMap:
    bc.check_labels(mesh.labels)
    nv, ne = mesh.n_vertices, len(mesh.edges)
    n_p2 = nv + ne
    u_mask = np.zeros(n_p2, dtype=bool)
    ess = mesh._label_mask(bc.segments("u", ESSENTIAL))
    u_mask[mesh.boundary_edges[ess].ravel()] = True
    u_mask[nv + mesh.boundary_edge_ids[ess]] = True
    p_mask = np.zeros(nv, dtype=bool)
    p_mask[mesh.boundary_vertices(bc.segments("p", ESSENTIAL))] = True
    u_ess = np.concatenate([u_mask, u_mask])
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    return DofMap(
        n_vertices=nv,
        n_p2=n_p2,
        u_free=np.flatnonzero(~u_ess),
        p_free=np.flatnonzero(~p_mask),
        u_essential=u_ess,
        p_essential=p_mask,
        p2_nodes=np.vstack([mesh.vertices, mid]),
    )


class _UnitMatrices:
    """Parameter-free matrices on the full dof sets (2*mu = kappa = 1)."""

    def __init__(self, mesh: Mesh):
        ed = element_data(mesh)
        n_p2, nv = mesh.n_vertices + len(mesh.edges), mesh.n_vertices
        G, w = ed.p2_grads, ed.wdet
        gx, gy = G[..., 0], G[..., 1]
        Kxx = np.einsum("tq,tqa,tqb->tab", w, gx, gx) + 0.5 * np.einsum("tq,tqa,tqb->tab", w, gy, gy)
        Kyy = np.einsum("tq,tqa,tqb->tab", w, gy, gy) + 0.5 * np.einsum("tq,tqa,tqb->tab", w, gx, gx)
        Kxy = 0.5 * np.einsum("tq,tqa,tqb->tab", w, gy, gx)
        Ke = np.block([[Kxx, Kxy], [Kxy.transpose(0, 2, 1), Kyy]])
        udofs = np.hstack([ed.p2_dofs, n_p2 + ed.p2_dofs])
        self.E = _scatter(udofs[:, :, None].repeat(12, 2), udofs[:, None, :].repeat(12, 1), Ke, (2 * n_p2,) * 2)

        V2 = ed.p2_values
        Mu = np.einsum("tq,qa,qb->tab", w, V2, V2)
        Z = np.zeros_like(Mu)
        self.Mu = _scatter(udofs[:, :, None].repeat(12, 2), udofs[:, None, :].repeat(12, 1),
                           np.block([[Mu, Z], [Z, Mu]]), (2 * n_p2,) * 2)

        V1 = ed.p1_values
        sdofs = mesh.triangles
        Bx = np.einsum("tq,qi,tqa->tia", w, V1, gx)
        By = np.einsum("tq,qi,tqa->tia", w, V1, gy)
        self.B = _scatter(sdofs[:, :, None].repeat(12, 2), udofs[:, None, :].repeat(3, 1),
                          np.concatenate([Bx, By], axis=2), (nv, 2 * n_p2))
        Ms = np.einsum("tq,qi,qj->tij", w, V1, V1)
        self.M = _scatter(sdofs[:, :, None].repeat(3, 2), sdofs[:, None, :].repeat(3, 1), Ms, (nv, nv))
        gb = ed.grad_bary
        Ls = ed.areas[:, None, None] * np.einsum("tid,tjd->tij", gb, gb)
        self.L = _scatter(sdofs[:, :, None].repeat(3, 2), sdofs[:, None, :].repeat(3, 1), Ls, (nv, nv))


_UNIT_CACHE: "weakref.WeakKeyDictionary[Mesh, _UnitMatrices]" = weakref.WeakKeyDictionary()


def _unit_matrices(mesh: Mesh) -> _UnitMatrices:
    mats = _UNIT_CACHE.get(mesh)
    if mats is None:
        mats = _UNIT_CACHE[mesh] = _UnitMatrices(mesh)
    return mats


def rigid_motions(dofmap: DofMap) -> np.ndarray:
    """(2*n_p2, 3) nodal interpolants of the two translations and the rotation."""
    x, y = dofmap.p2_nodes.T
    one, zero = np.ones_like(x), np.zeros_like(x)
    return np.column_stack([
        np.concatenate([one, zero]),
        np.concatenate([zero, one]),
        np.concatenate([-y, x]),
    ])


class OperatorSet:
    """Discrete operators restricted to the free dofs.

    Attributes
    ----------
    E : elasticity stiffness, entries of 2 mu eps(phi_i):eps(phi_j)
    L : pressure stiffness, entries of kappa grad psi_i . grad psi_j (free pressure dofs)
    B : (n_s, n_u) divergence coupling, entries of psi_i div phi_j
    M : (n_s, n_s) P1 mass matrix on all vertices
    Msp : (n_s, n_p) mass columns of the free pressure dofs
    mean : (n_s,) integrals of the P1 basis; ``mean_p`` its free-pressure part
    rm : (n_u, 3) L2 pairings with rigid motions, or None without the quotient
    """

    def __init__(self, mesh: Mesh, bc: BoundaryConfig, params: MaterialParams, spaces: SpaceConfig,
                 dofmap: DofMap | None = None):
        self.mesh = mesh
        self.bc = bc
        self.params = params
        self.spaces = spaces
        self.dofmap = build_dofmap(mesh, bc) if dofmap is None else dofmap
        unit = _unit_matrices(mesh)
        uf, pf = self.dofmap.u_free, self.dofmap.p_free
        self._E1 = unit.E[uf][:, uf].tocsr()
        self._L1 = unit.L[pf][:, pf].tocsr()
        self.B = unit.B[:, uf].tocsr()
        self.M = unit.M
        self.Msp = unit.M[:, pf].tocsr()
        self.Mp = unit.M[pf][:, pf].tocsr()
        self.mean = np.asarray(unit.M.sum(axis=1)).ravel()
        self.mean_p = self.mean[pf]
        self.area = float(self.mean.sum())
        self.rm = None
        if spaces.u_quotient_rigid_motions:
            self.rm = (unit.Mu @ rigid_motions(self.dofmap))[uf]

    def with_params(self, params: MaterialParams, spaces: SpaceConfig | None = None) -> "OperatorSet":
        """Same mesh and boundary tags, new parameters; geometry is reused."""
        if spaces is None:
            from .problem import select_spaces
            spaces = select_spaces(self.bc, params)
        return OperatorSet(self.mesh, self.bc, params, spaces, self.dofmap)

    @property
    def E(self) -> sp.csr_matrix:
        return 2 * self.params.mu * self._E1

    @property
    def L(self) -> sp.csr_matrix:
        return self.params.kappa * self._L1

    @property
    def gamma(self) -> float:
        return gamma(self.params, self.spaces)

    @property
    def n_u(self):
        return self.dofmap.n_u

    @property
    def n_p(self):
        return self.dofmap.n_p

    @property
    def n_s(self):
        return self.dofmap.n_s

    @cached_property
    def _E_factor(self):
        return _bordered_factor(self.E, self.rm)

    @cached_property
    def _L_factor(self):
        return _bordered_factor(self.L, self.mean_p[:, None] if self.spaces.p_zero_mean else None)

    @cached_property
    def _M_factor(self):
        return SaddleFactorization(self.M)

    def solve_E(self, r: np.ndarray) -> np.ndarray:
        """Riesz representative in the displacement space: E x = r on the
        (possibly quotiented) space.  ``r`` may hold functionals as columns."""
        return _bordered_solve(self._E_factor, r, self.n_u)

    def solve_L(self, r: np.ndarray) -> np.ndarray:
        """Riesz representative in the pressure space (columns allowed)."""
        return _bordered_solve(self._L_factor, r, self.n_p)

    def solve_M(self, r: np.ndarray) -> np.ndarray:
        return self._M_factor.solve(r)

    def project_D(self, q):
        return apply_PD(q, self.spaces, self)

    def project_Pbar(self, q):
        return apply_PPbar(q, self.spaces, self)

    def riesz_D(self, r: np.ndarray) -> np.ndarray:
        """L2 representative in the discrete D space of a functional on P1."""
        return _project_columns(self.solve_M(r), self.spaces.D_zero_mean, self)

    def riesz_Pbar(self, r: np.ndarray) -> np.ndarray:
        return _project_columns(self.solve_M(r), self.spaces.Pbar_zero_mean, self)


def _project_columns(q, zero_mean, ops):
    if not zero_mean:
        return q
    if q.ndim == 1:
        return _remove_mean(q, ops)
    return _remove_mean(q.T, ops).T


def _bordered_factor(A, C):
    if C is None:
        return SaddleFactorization(A)
    k = C.shape[1]
    K = sp.bmat([[A, sp.csr_matrix(C)], [sp.csr_matrix(C.T), sp.csr_matrix((k, k))]])
    return SaddleFactorization(K)


def _bordered_solve(factor, r, n):
    r = np.asarray(r, dtype=float)
    extra = factor.shape[0] - n
    if extra:
        pad = np.zeros((extra,) + r.shape[1:])
        return factor.solve(np.concatenate([r, pad]))[:n]
    return factor.solve(r)


def assemble_operators(mesh: Mesh, bc: BoundaryConfig, params: MaterialParams,
                       spaces: SpaceConfig) -> tuple[DofMap, OperatorSet]:
    ops = OperatorSet(mesh, bc, params, spaces)
    return ops.dofmap, ops


def _remove_mean(q, ops):
    q = np.asarray(q, dtype=float)
    return q - (q @ ops.mean / ops.area)[..., None]


def apply_PD(q, spaces: SpaceConfig, ops: OperatorSet) -> np.ndarray:
    """L2-orthogonal projection of P1 coefficients (last axis) onto D."""
    q = np.asarray(q, dtype=float)
    return _remove_mean(q, ops) if spaces.D_zero_mean else q


def apply_PPbar(q, spaces: SpaceConfig, ops: OperatorSet) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return _remove_mean(q, ops) if spaces.Pbar_zero_mean else q


def interpolate_p1(mesh: Mesh, f) -> np.ndarray:
    """Nodal values of a scalar field ``f(x) -> (npts,)`` at the vertices."""
    return np.asarray(f(mesh.vertices), dtype=float)


def interpolate_p2_vector(dofmap: DofMap, f) -> np.ndarray:
    """Full blocked P2 coefficients of a vector field ``f(x) -> (npts, 2)``."""
    vals = np.asarray(f(dofmap.p2_nodes), dtype=float)
    return np.concatenate([vals[:, 0], vals[:, 1]])


def assemble_scalar_functional(mesh: Mesh, f) -> np.ndarray:
    """Vector of integrals of ``f`` against the P1 basis on all vertices."""
    ed = element_data(mesh)
    vals = np.asarray(f(ed.qpoints.reshape(-1, 2)), dtype=float).reshape(ed.wdet.shape)
    local = np.einsum("tq,tq,qi->ti", ed.wdet, vals, ed.p1_values)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)


def _check_natural(mesh, bc, which, data):
    natural = set(bc.segments(which, NATURAL))
    for label in data:
        if label not in mesh.labels:
            raise ValueError(f"boundary data for unknown segment {label!r}")
        if label not in natural:
            field = "displacement" if which == "u" else "pressure"
            raise ValueError(f"{field} boundary data on essential segment {label!r}")


def _edge_points(mesh, mask):
    e = mesh.boundary_edges[mask]
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    pts = a[:, None, :] + EDGE_S[None, :, None] * (b - a)[:, None, :]
    length = np.sqrt(((b - a) ** 2).sum(axis=1))
    return e, pts, length


@dataclass(frozen=True)
class LoadVectors:
    u: np.ndarray
    p: np.ndarray


def assemble_loads(mesh: Mesh, dofmap: DofMap, bc: BoundaryConfig, t: float, f_u=None, f_p=None,
                   g_u=None, g_p=None) -> LoadVectors:
    """Load vectors of the momentum and mass balance rows at time ``t``.

    ``f_u(x, t) -> (npts, 2)`` and ``f_p(x, t) -> (npts,)`` are volume
    sources; ``g_u``/``g_p`` map natural boundary labels to tractions
    ``(npts, 2)`` and fluxes ``(npts,)``.
    """
    g_u = g_u or {}
    g_p = g_p or {}
    _check_natural(mesh, bc, "u", g_u)
    _check_natural(mesh, bc, "p", g_p)
    ed = element_data(mesh)
    n_p2, nv = dofmap.n_p2, dofmap.n_vertices
    lu = np.zeros(2 * n_p2)
    lp = np.zeros(nv)
    if f_u is not None:
        vals = np.asarray(f_u(ed.qpoints.reshape(-1, 2), t), dtype=float).reshape(ed.wdet.shape + (2,))
        for c in range(2):
            local = np.einsum("tq,tq,qa->ta", ed.wdet, vals[..., c], ed.p2_values)
            lu[c * n_p2:(c + 1) * n_p2] += np.bincount(ed.p2_dofs.ravel(), local.ravel(), minlength=n_p2)
    if f_p is not None:
        lp += assemble_scalar_functional(mesh, lambda x: f_p(x, t))
    s = EDGE_S
    shape2 = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)
    shape1 = np.stack([1 - s, s], axis=1)
    for label, g in g_u.items():
        mask = mesh._label_mask([label])
        e, pts, length = _edge_points(mesh, mask)
        vals = np.asarray(g(pts.reshape(-1, 2), t), dtype=float).reshape(pts.shape[:2] + (2,))
        nodes = np.column_stack([e, nv + mesh.boundary_edge_ids[mask]])
        for c in range(2):
            local = np.einsum("e,q,eq,qa->ea", length, EDGE_W, vals[..., c], shape2)
            lu[c * n_p2:(c + 1) * n_p2] += np.bincount(nodes.ravel(), local.ravel(), minlength=n_p2)
    for label, g in g_p.items():
        mask = mesh._label_mask([label])
        e, pts, length = _edge_points(mesh, mask)
        vals = np.asarray(g(pts.reshape(-1, 2), t), dtype=float).reshape(pts.shape[:2])
        local = np.einsum("e,q,eq,qa->ea", length, EDGE_W, vals, shape1)
        lp += np.bincount(e.ravel(), local.ravel(), minlength=nv)
    return LoadVectors(u=lu[dofmap.u_free], p=lp[dofmap.p_free])
