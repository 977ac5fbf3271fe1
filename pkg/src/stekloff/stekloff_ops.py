"""Function-level discrete boundary operators.

Boundary tangent fields are sums of a Whitney part (coefficients on the
boundary edge dofs) and a part that is constant on every boundary face.  Both
the surface-curl projection ``S_h`` and its gradient-correction variant
``S_h^+`` return fields in this mixed representation, so no projection back
onto Whitney functions is ever needed; pairings are computed exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (
    DofMap,
    SurfaceData,
    assemble_A,
    assemble_mass,
    assemble_surface_blocks,
    build_dof_map,
    edge_permutation,
    gradient_incidence,
)
from .femcore import _TA, _TB, TRI_RULE, MaterialField
from .linsolve import condition_estimate, factorize
from .mesh import Mesh

RCOND_MIN = 1e-12


class NeumannResonanceError(RuntimeError):
    """``kappa^2`` is (numerically) a discrete Neumann eigenvalue."""

    def __init__(self, rcond: float):
        super().__init__(
            f"source operator is near-singular (reciprocal condition estimate {rcond:.2e}); "
            "kappa^2 is at or near a discrete Neumann eigenvalue"
        )
        self.rcond = rcond


@dataclass(frozen=True)
class BoundaryTangentField:
    """Tangent field on the boundary: Whitney part plus per-face constants.

    ``whitney`` holds boundary edge coefficients in dof order, ``face`` holds
    one tangent vector per boundary face, shape ``(F, 3)``.  Either may be
    ``None``.
    """

    whitney: np.ndarray | None = None
    face: np.ndarray | None = None

    @property
    def representation(self) -> str:
        parts = [n for n in ("whitney", "face") if getattr(self, n) is not None]
        return "+".join(parts) if parts else "zero"

    def __add__(self, other: "BoundaryTangentField") -> "BoundaryTangentField":
        return BoundaryTangentField(_add(self.whitney, other.whitney), _add(self.face, other.face))

    def __sub__(self, other: "BoundaryTangentField") -> "BoundaryTangentField":
        return self + other.scale(-1.0)

    def scale(self, c) -> "BoundaryTangentField":
        return BoundaryTangentField(
            None if self.whitney is None else c * self.whitney,
            None if self.face is None else c * self.face,
        )

    __rmul__ = scale


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class BoundaryOperators:
    """Surface matrices and factorizations shared by the operator evaluations.

    Factorizations are built lazily under a lock, so one instance may be used
    from several threads.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap | None = None, kappa: float = 1.0,
                 eps: MaterialField | None = None):
        self.mesh = mesh
        self.dofs = dofs or build_dof_map(mesh)
        self.kappa = float(kappa)
        self.eps = eps or MaterialField.constant(1.0)
        self.surf = SurfaceData(mesh)
        self.blocks = assemble_surface_blocks(mesh, self.dofs, self.surf)
        d = self.dofs
        # face-local scalar numbering (-1 for the pinned vertex)
        v2s = d.vertex_to_scalar[self.surf.faces]
        self._fs = np.where(v2s >= 0, v2s - d.n_edges, -1)
        self._fe = d.edge_to_dof[self.surf.face_edges] - d.n_interior
        self._lock = threading.Lock()
        self._surface_solve = None
        self._source = None

    # -- factorizations ---------------------------------------------------

    def _surface(self):
        with self._lock:
            if self._surface_solve is None:
                self._surface_solve = factorize(self.blocks.M_H1, backend="superlu").solve
            return self._surface_solve

    def edge_matrix(self) -> sp.csr_matrix:
        d = self.dofs
        a = assemble_A(self.mesh, self.kappa, self.eps, d)
        return a[: d.n_edges, : d.n_edges].tocsr()

    def _source_factor(self):
        with self._lock:
            if self._source is None:
                a = self.edge_matrix()
                try:
                    fact = factorize(a)
                except RuntimeError:
                    raise NeumannResonanceError(0.0) from None
                rcond = 1.0 / condition_estimate(a, fact)
                if rcond < RCOND_MIN:
                    raise NeumannResonanceError(rcond)
                self._source = (fact, rcond)
            return self._source

    @property
    def rcond(self) -> float:
        return self._source_factor()[1]

    # -- fields -------------------------------------------------------------

    def _scalar_full(self, q):
        """Face-local values of a pinned scalar vector, shape (F, 3)."""
        q = np.asarray(q)
        full = np.concatenate([q, np.zeros(1, dtype=q.dtype)])
        return full[self._fs]

    def surface_curl(self, q) -> BoundaryTangentField:
        """``curl_G q`` for pinned P1 coefficients ``q`` (per-face constants)."""
        return BoundaryTangentField(face=np.einsum("fv,fvk->fk", self._scalar_full(q), self.surf.curls))

    def surface_gradient(self, q) -> BoundaryTangentField:
        return BoundaryTangentField(face=np.einsum("fv,fvk->fk", self._scalar_full(q), self.surf.grads))

    def surface_gradient_whitney(self, q) -> BoundaryTangentField:
        """``grad_G q`` written in boundary Whitney coefficients (exact)."""
        d = self.dofs
        g = gradient_incidence(self.mesh)[d.boundary_edges]
        full = np.zeros(self.mesh.n_vertices, dtype=np.result_type(q, float))
        full[d.scalar_vertices] = q
        return BoundaryTangentField(whitney=np.asarray(g @ full))

    def trace(self, u_edges) -> BoundaryTangentField:
        """Tangential trace of an edge-dof vector (interior part ignored)."""
        d = self.dofs
        return BoundaryTangentField(whitney=np.asarray(u_edges)[d.boundary_slice].copy())

    def check_tangent(self, f: BoundaryTangentField, tol: float = 1e-12) -> None:
        """Raise if a per-face vector has a normal component."""
        if f.face is None:
            return
        face = np.asarray(f.face)
        if face.shape != self.surf.normal.shape:
            raise ValueError(f"face part has shape {face.shape}, expected {self.surf.normal.shape}")
        nc = np.abs(np.einsum("fk,fk->f", face, self.surf.normal))
        scale = max(np.abs(face).max(), 1.0)
        if nc.max(initial=0.0) > tol * scale:
            raise ValueError(f"face vectors are not tangent (normal component {nc.max():.2e})")

    # -- pairings -----------------------------------------------------------

    def _face_integrals(self):
        """``int_F W_e`` for the three (globally oriented) edges of each face."""
        s = self.surf
        w = (s.area[:, None, None] / 3.0) * (s.grads[:, _TB, :] - s.grads[:, _TA, :])
        return w * s.signs[:, :, None]

    def _scatter_scalar(self, loc):
        out = np.zeros(self.dofs.n_scalar, dtype=loc.dtype)
        fs = self._fs.ravel()
        keep = fs >= 0
        np.add.at(out, fs[keep], loc.ravel()[keep])
        return out

    def pair_curls(self, f: BoundaryTangentField) -> np.ndarray:
        """``<f, curl_G psi_j>`` for every unpinned hat ``psi_j``."""
        out = np.zeros(self.dofs.n_scalar, dtype=_dtype(f))
        if f.whitney is not None:
            out = out + self.blocks.B_b.T @ f.whitney
        if f.face is not None:
            loc = self.surf.area[:, None] * np.einsum("fk,fvk->fv", f.face, self.surf.curls)
            out = out + self._scatter_scalar(loc)
        return out

    def pair_gradients(self, f: BoundaryTangentField) -> np.ndarray:
        out = np.zeros(self.dofs.n_scalar, dtype=_dtype(f))
        if f.whitney is not None:
            out = out + self.blocks.C_b.T @ f.whitney
        if f.face is not None:
            loc = self.surf.area[:, None] * np.einsum("fk,fvk->fv", f.face, self.surf.grads)
            out = out + self._scatter_scalar(loc)
        return out

    def pair_whitney(self, f: BoundaryTangentField) -> np.ndarray:
        """``<f, (W_i)_T>`` for the boundary edge dofs."""
        out = np.zeros(self.dofs.n_boundary, dtype=_dtype(f))
        if f.whitney is not None:
            out = out + self.blocks.M_curl @ f.whitney
        if f.face is not None:
            loc = np.einsum("fk,fek->fe", f.face, self._face_integrals())
            np.add.at(out, self._fe.ravel(), loc.ravel())
        return out

    def inner(self, f: BoundaryTangentField, g: BoundaryTangentField) -> complex:
        """``<f, g> = int_G f . conj(g)``."""
        total = 0.0
        if g.whitney is not None:
            total += np.vdot(g.whitney, self.pair_whitney(f))
        if g.face is not None:
            if f.face is not None:
                total += np.sum(self.surf.area * np.einsum("fk,fk->f", f.face, np.conj(g.face)))
            if f.whitney is not None:
                w = np.einsum("fe,fek->fk", f.whitney[self._fe], self._face_integrals())
                total += np.sum(np.einsum("fk,fk->f", w, np.conj(g.face)))
        return complex(total)

    def evaluate(self, f: BoundaryTangentField, bary) -> np.ndarray:
        """Values at face-barycentric points ``bary`` (q, 3); shape (F, q, 3)."""
        bary = np.asarray(bary, dtype=float)
        nf = len(self.surf.area)
        out = np.zeros((nf, len(bary), 3), dtype=_dtype(f))
        if f.whitney is not None:
            g = self.surf.grads
            w = bary[:, _TA, None] * g[:, None, _TB, :] - bary[:, _TB, None] * g[:, None, _TA, :]
            c = np.asarray(f.whitney)[self._fe] * self.surf.signs
            out = out + np.einsum("fe,fqek->fqk", c, w)
        if f.face is not None:
            out = out + np.asarray(f.face)[:, None, :]
        return out

    def norm(self, f: BoundaryTangentField) -> float:
        """L2 norm on the boundary from pointwise values (no cancellation)."""
        v = self.evaluate(f, TRI_RULE.points)
        w = 2.0 * self.surf.area[:, None] * TRI_RULE.weights[None, :]
        return float(np.sqrt(np.sum(w * np.einsum("fqk,fqk->fq", v, np.conj(v)).real)))

    # -- operators ------------------------------------------------------------

    def surface_potential(self, mu: BoundaryTangentField) -> np.ndarray:
        """Pinned ``q_h`` with ``<curl q_h, curl psi> = <mu, curl psi>``."""
        self.check_tangent(mu)
        return self._surface()(self.pair_curls(mu))

    def apply_Sh(self, mu: BoundaryTangentField) -> BoundaryTangentField:
        return self.surface_curl(self.surface_potential(mu))

    def apply_Splus(self, mu: BoundaryTangentField) -> BoundaryTangentField:
        self.check_tangent(mu)
        p = self._surface()(-self.pair_gradients(mu))
        return mu + self.surface_gradient(p)

    def source_rhs(self, f: BoundaryTangentField) -> np.ndarray:
        d = self.dofs
        rhs = np.zeros(d.n_edges, dtype=_dtype(f))
        rhs[d.boundary_slice] = self.pair_whitney(f)
        return rhs

    def solve_source(self, f: BoundaryTangentField) -> np.ndarray:
        """Edge coefficients (dof order) of ``u_h`` with ``a(u_h, v) = <f, v_T>``."""
        fact, _ = self._source_factor()
        return fact.solve(self.source_rhs(f))

    def apply_Th(self, f: BoundaryTangentField) -> BoundaryTangentField:
        return self.apply_Sh(self.trace(self.solve_source(f)))

    # -- constraint ---------------------------------------------------------

    def weighted_divergence(self, u_edges) -> np.ndarray:
        """``(eps u_h, grad p)`` for the hat ``p`` of every mesh vertex."""
        d = self.dofs
        m = assemble_mass(self.mesh, d, self.eps)
        g = edge_permutation(d) @ gradient_incidence(self.mesh)
        return np.asarray(g.T @ (m @ np.asarray(u_edges)[: d.n_edges]))


def _dtype(f: BoundaryTangentField):
    parts = [p for p in (f.whitney, f.face) if p is not None]
    return np.result_type(*parts, float) if parts else float


# thin functional wrappers -------------------------------------------------------


def apply_Sh(mesh: Mesh, dofs: DofMap, mu: BoundaryTangentField, ops: BoundaryOperators | None = None) -> BoundaryTangentField:
    return (ops or BoundaryOperators(mesh, dofs)).apply_Sh(mu)


def apply_Splus(mesh: Mesh, dofs: DofMap, mu: BoundaryTangentField, ops: BoundaryOperators | None = None) -> BoundaryTangentField:
    return (ops or BoundaryOperators(mesh, dofs)).apply_Splus(mu)


def solve_source(mesh: Mesh, dofs: DofMap, kappa: float, eps: MaterialField | None, f: BoundaryTangentField,
                 ops: BoundaryOperators | None = None) -> np.ndarray:
    return (ops or BoundaryOperators(mesh, dofs, kappa, eps)).solve_source(f)


def apply_Th(mesh: Mesh, dofs: DofMap, kappa: float, eps: MaterialField | None, f: BoundaryTangentField,
             ops: BoundaryOperators | None = None) -> BoundaryTangentField:
    return (ops or BoundaryOperators(mesh, dofs, kappa, eps)).apply_Th(f)
