"""Global numbering and sparse assembly of the Stekloff block pencils.

Unknowns are ordered ``(u_i, u_b, q)``: interior edge coefficients, boundary
edge coefficients and P1 coefficients on the boundary vertices with one pinned
vertex removed (this realizes the quotient by constants).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import femcore
from .femcore import MaterialField
from .mesh import Mesh

logger = logging.getLogger(__name__)


class Formulation(str, enum.Enum):
    SH = "sh"
    SHPLUS = "shplus"

    @classmethod
    def parse(cls, value) -> "Formulation":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("+", "plus").replace("⁺", "plus")
        for f in cls:
            if f.value == key:
                return f
        raise ValueError(f"unknown formulation {value!r} (expected 'sh' or 'shplus')")


@dataclass(frozen=True)
class DofMap:
    interior_edges: np.ndarray
    boundary_edges: np.ndarray
    scalar_vertices: np.ndarray
    pinned_vertex: int
    edge_to_dof: np.ndarray
    vertex_to_scalar: np.ndarray
    n_edges: int

    @property
    def n_interior(self) -> int:
        return len(self.interior_edges)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_edges)

    @property
    def n_scalar(self) -> int:
        return len(self.scalar_vertices)

    @property
    def n_dofs(self) -> int:
        return self.n_edges + self.n_scalar

    @property
    def interior_slice(self) -> slice:
        return slice(0, self.n_interior)

    @property
    def boundary_slice(self) -> slice:
        return slice(self.n_interior, self.n_edges)

    @property
    def edge_slice(self) -> slice:
        return slice(0, self.n_edges)

    @property
    def scalar_slice(self) -> slice:
        return slice(self.n_edges, self.n_dofs)

    def edge_vector(self, x: np.ndarray) -> np.ndarray:
        """Edge coefficients of a dof vector in global edge numbering."""
        out = np.zeros(self.n_edges, dtype=np.result_type(x, float))
        out[np.concatenate([self.interior_edges, self.boundary_edges])] = x[: self.n_edges]
        return out


def build_dof_map(mesh: Mesh, pin: int | None = None) -> DofMap:
    """Partition edges into interior/boundary and number the surface scalars.

    ``pin`` is the global vertex whose scalar is fixed to zero; the default is
    the lowest-index boundary vertex.
    """
    bedges = np.asarray(mesh.boundary.edge_ids, dtype=np.int64)
    bverts = np.asarray(mesh.boundary.vertex_ids, dtype=np.int64)
    if len(bedges) == 0:
        raise ValueError("mesh has an empty boundary")
    if pin is None:
        pin = int(bverts[0])
    elif pin not in set(bverts.tolist()):
        raise ValueError(f"pinned vertex {pin} is not a boundary vertex")
    is_b = np.zeros(mesh.n_edges, dtype=bool)
    is_b[bedges] = True
    interior = np.nonzero(~is_b)[0]
    e2d = np.empty(mesh.n_edges, dtype=np.int64)
    e2d[interior] = np.arange(len(interior))
    e2d[bedges] = len(interior) + np.arange(len(bedges))
    scal = bverts[bverts != pin]
    v2s = np.full(mesh.n_vertices, -1, dtype=np.int64)
    v2s[scal] = mesh.n_edges + np.arange(len(scal))
    return DofMap(interior, bedges, scal, int(pin), e2d, v2s, mesh.n_edges)


def coo_to_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """Sum duplicate triplets in an order fixed by (row, col, value).

    Sorting by value as the last key makes the result independent of the order
    in which elements were visited, so matrices are bit-reproducible.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals).ravel()
    keep = (rows >= 0) & (cols >= 0)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) == 0:
        return sp.csr_matrix(shape, dtype=vals.dtype if vals.size else float)
    key = rows * shape[1] + cols
    start = np.concatenate([[0], np.nonzero(np.diff(key))[0] + 1])
    summed = np.add.reduceat(vals, start)
    m = sp.csr_matrix((summed, (rows[start], cols[start])), shape=shape)
    m.sort_indices()
    return m


def _tet_triplets(mesh: Mesh, dofs: DofMap, local: np.ndarray):
    et = mesh.edge_table
    d = dofs.edge_to_dof[et.tet_edges]  # (T, 6)
    s = et.tet_edge_signs.astype(float)
    vals = local * s[:, :, None] * s[:, None, :]
    rows = np.broadcast_to(d[:, :, None], vals.shape)
    cols = np.broadcast_to(d[:, None, :], vals.shape)
    return rows, cols, vals


def _tet_eps(mesh: Mesh, eps: MaterialField):
    """Per-tet constant permittivity, or ``None`` when some region is a function."""
    if eps.is_piecewise_constant:
        tags = np.unique(mesh.regions)
        lut = {int(t): float(eps.for_region(t)) for t in tags}
        return np.array([lut[int(r)] for r in mesh.regions]) if len(tags) > 1 else np.full(mesh.n_tets, lut[int(tags[0])])
    return None


def local_mass_all(mesh: Mesh, eps: MaterialField) -> np.ndarray:
    x = mesh.points[mesh.tets]
    e = _tet_eps(mesh, eps)
    if e is not None:
        return femcore.local_mass(x, e)
    out = np.empty((mesh.n_tets, 6, 6))
    for tag in np.unique(mesh.regions):
        sel = mesh.regions == tag
        out[sel] = femcore.local_mass(x[sel], eps.for_region(tag), femcore.TET_RULE)
    return out


def assemble_curl_curl(mesh: Mesh, dofs: DofMap) -> sp.csr_matrix:
    """Curl-curl matrix on the edge dofs only (``n_edges x n_edges``)."""
    k = femcore.local_curl_curl(mesh.points[mesh.tets])
    return coo_to_csr(*_tet_triplets(mesh, dofs, k), (dofs.n_edges, dofs.n_edges))


def assemble_mass(mesh: Mesh, dofs: DofMap, eps: MaterialField) -> sp.csr_matrix:
    """``(eps u, v)`` on the edge dofs."""
    m = local_mass_all(mesh, eps)
    return coo_to_csr(*_tet_triplets(mesh, dofs, m), (dofs.n_edges, dofs.n_edges))


def assemble_A(mesh: Mesh, kappa: float, eps: MaterialField, dofs: DofMap) -> sp.csr_matrix:
    """Matrix of ``a(u, v) = (curl u, curl v) - kappa^2 (eps u, v)``.

    Full pencil size; the scalar rows and columns are empty.
    """
    if not kappa > 0:
        raise ValueError("wavenumber must be positive")
    x = mesh.points[mesh.tets]
    local = femcore.local_curl_curl(x) - kappa**2 * local_mass_all(mesh, eps)
    return coo_to_csr(*_tet_triplets(mesh, dofs, local), (dofs.n_dofs, dofs.n_dofs))


@dataclass(frozen=True)
class SurfaceBlocks:
    """Boundary matrices in dof numbering.

    ``B_b`` (boundary edges x scalars) pairs surface curls of hats with edge
    traces, ``C_b`` the same with surface gradients, ``M_curl`` is the
    tangential-trace mass and ``M_H1`` the (pinned) surface stiffness.
    """

    B_b: sp.csr_matrix
    C_b: sp.csr_matrix
    M_curl: sp.csr_matrix
    M_H1: sp.csr_matrix
    M_H1_curl: sp.csr_matrix


class SurfaceData:
    """Per-boundary-face geometry and kernels, cached for operator evaluation."""

    def __init__(self, mesh: Mesh):
        b = mesh.boundary
        x_tet = mesh.points[mesh.tets[b.face_tets]]
        bc, bg, mt, s, area, n = femcore.face_pairings_from_tets(x_tet, b.face_local)
        self.mesh = mesh
        self.Bc, self.Bg, self.Mt, self.S = bc, bg, mt, s
        self.area, self.normal = area, n
        p = mesh.points[b.faces]
        g, _, _ = femcore.triangle_geometry(p)
        self.grads = g  # (F, 3, 3) intrinsic hat gradients
        self.curls = femcore.surface_curls(g, n)
        self.signs = b.face_edge_signs.astype(float)
        self.faces = b.faces
        self.face_edges = b.face_edges


def assemble_surface_blocks(mesh: Mesh, dofs: DofMap, surf: SurfaceData | None = None) -> SurfaceBlocks:
    surf = surf or SurfaceData(mesh)
    nb, ns = dofs.n_boundary, dofs.n_scalar
    erow = dofs.edge_to_dof[surf.face_edges] - dofs.n_interior  # (F, 3) in 0..nb
    vcol = dofs.vertex_to_scalar[surf.faces]
    vcol = np.where(vcol >= 0, vcol - dofs.n_edges, -1)
    sg = surf.signs

    def edge_scalar(local):
        vals = local * sg[:, :, None]
        rows = np.broadcast_to(erow[:, :, None], vals.shape)
        cols = np.broadcast_to(vcol[:, None, :], vals.shape)
        return coo_to_csr(rows, cols, vals, (nb, ns))

    def scalar_scalar(local):
        rows = np.broadcast_to(vcol[:, :, None], local.shape)
        cols = np.broadcast_to(vcol[:, None, :], local.shape)
        return coo_to_csr(rows, cols, local, (ns, ns))

    vals = surf.Mt * sg[:, :, None] * sg[:, None, :]
    rows = np.broadcast_to(erow[:, :, None], vals.shape)
    cols = np.broadcast_to(erow[:, None, :], vals.shape)
    m_curl = coo_to_csr(rows, cols, vals, (nb, nb))
    s_curl = surf.area[:, None, None] * np.einsum("fik,fjk->fij", surf.curls, surf.curls)
    return SurfaceBlocks(
        B_b=edge_scalar(surf.Bc),
        C_b=edge_scalar(surf.Bg),
        M_curl=m_curl,
        M_H1=scalar_scalar(surf.S),
        M_H1_curl=scalar_scalar(s_curl),
    )


def _embed(blocks, dofs: DofMap) -> sp.csr_matrix:
    """Place ``[[P, Q], [Q^T, R]]`` on the (u_b, q) rows/cols of the full pencil."""
    p, q, r = blocks
    ni = dofs.n_interior
    z_ii = sp.csr_matrix((ni, ni))
    z_ib = sp.csr_matrix((ni, dofs.n_boundary))
    z_is = sp.csr_matrix((ni, dofs.n_scalar))
    m = sp.bmat([[z_ii, z_ib, z_is], [z_ib.T, p, q], [z_is.T, q.T, r]], format="csr")
    m.eliminate_zeros()
    m.sort_indices()
    return m


def assemble_B(mesh: Mesh, dofs: DofMap, formulation="sh", surf: SurfaceData | None = None) -> sp.csr_matrix:
    """Right-hand pencil matrix.

    ``sh``:     ``[[0, 0, 0], [0, 0, B_b], [0, B_b^T, -M_H1]]``
    ``shplus``: ``[[0, 0, 0], [0, M_curl, C_b], [0, C_b^T, M_H1]]``
    """
    form = Formulation.parse(formulation)
    blk = assemble_surface_blocks(mesh, dofs, surf)
    nb = dofs.n_boundary
    if form is Formulation.SH:
        return _embed((sp.csr_matrix((nb, nb)), blk.B_b, -blk.M_H1), dofs)
    return _embed((blk.M_curl, blk.C_b, blk.M_H1), dofs)


@dataclass(frozen=True)
class BlockSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    formulation: Formulation
    dofs: DofMap
    kappa: float = 1.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


def build_system(mesh: Mesh, kappa: float = 1.0, eps: MaterialField | None = None, formulation="sh",
                 dofs: DofMap | None = None, A=None) -> BlockSystem:
    eps = eps or MaterialField.constant(1.0)
    dofs = dofs or build_dof_map(mesh)
    if A is None:
        A = assemble_A(mesh, kappa, eps, dofs)
    B = assemble_B(mesh, dofs, formulation)
    return BlockSystem(A, B, Formulation.parse(formulation), dofs, float(kappa))


def gradient_incidence(mesh: Mesh) -> sp.csr_matrix:
    """Vertex-to-edge incidence ``G`` (global numbering): edge coefficients of grad of hats."""
    e = mesh.edge_table.edges
    ne = len(e)
    rows = np.concatenate([np.arange(ne), np.arange(ne)])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([np.ones(ne), -np.ones(ne)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.n_vertices))


def edge_permutation(dofs: DofMap) -> sp.csr_matrix:
    """``P`` with ``P @ x_global = x_dof`` on the edge dofs."""
    ne = dofs.n_edges
    return sp.csr_matrix((np.ones(ne), (dofs.edge_to_dof, np.arange(ne))), shape=(ne, ne))


def surface_gradient_coefficients(mesh: Mesh, dofs: DofMap) -> sp.csr_matrix:
    """Boundary-edge coefficients of ``grad_G`` of every boundary-vertex hat.

    Shape ``(n_boundary, n_boundary_vertices)``, columns ordered as
    ``mesh.boundary.vertex_ids``.
    """
    g = gradient_incidence(mesh)
    return g[dofs.boundary_edges][:, mesh.boundary.vertex_ids].tocsr()


def assemble_source_rhs(mesh: Mesh, dofs: DofMap, f, surf: SurfaceData | None = None) -> np.ndarray:
    """Load vector ``<f, (W_i)_T>`` over all edge dofs (zero on interior edges).

    ``f`` maps an ``(F, q, 3)`` array of surface quadrature points to tangent
    vectors of the same shape (``F`` boundary faces, ``q`` points per face);
    normal components are projected out.
    """
    surf = surf or SurfaceData(mesh)
    quad = femcore.TRI_RULE
    p = mesh.points[surf.faces]  # (F, 3, 3)
    xq = np.einsum("qv,fvk->fqk", quad.points, p)
    fv = np.asarray(f(xq))
    fv = np.broadcast_to(fv, xq.shape) if fv.shape != xq.shape else fv
    n = surf.normal
    normal_part = np.einsum("fqk,fk->fq", fv, n)
    scale = max(float(np.max(np.abs(fv))) if fv.size else 0.0, 1e-300)
    if np.max(np.abs(normal_part)) > 1e-10 * scale:
        logger.warning("source data has normal components; projecting onto the tangent plane")
    fv = fv - normal_part[..., None] * n[:, None, :]
    # 2D Whitney functions on the face from intrinsic gradients
    lam = quad.points
    ta, tb = femcore._TA, femcore._TB
    g = surf.grads
    w = lam[:, ta, None] * g[:, None, tb, :] - lam[:, tb, None] * g[:, None, ta, :]  # (F, q, 3, 3)
    loc = 2.0 * surf.area[:, None] * np.einsum("q,fqk,fqek->fe", quad.weights, fv, w)
    loc = loc * surf.signs
    out = np.zeros(dofs.n_edges, dtype=np.result_type(loc, float))
    np.add.at(out, dofs.edge_to_dof[surf.face_edges].ravel(), loc.ravel())
    return out


def export_matrix_market(path, matrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
