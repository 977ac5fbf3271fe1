"""Lowest-order Whitney edge elements, P1 surface elements and their local matrices.

All kernels are vectorized over a leading batch axis: a tetrahedron is given
by an array of shape ``(..., 4, 3)`` and a triangle by ``(..., 3, 3)``.
Local edge ``k`` of a tetrahedron joins local vertices ``TET_EDGES[k]`` and its
basis function is ``l_a grad l_b - l_b grad l_a`` in *local* orientation; the
assembly multiplies by the global orientation signs.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .mesh import TET_EDGES, TET_FACES

TRI_EDGES = ((0, 1), (0, 2), (1, 2))

_EA = np.array([a for a, _ in TET_EDGES])
_EB = np.array([b for _, b in TET_EDGES])
_TA = np.array([a for a, _ in TRI_EDGES])
_TB = np.array([b for _, b in TRI_EDGES])


# ----------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference simplex.

    Weights sum to the reference measure (1/6 for the tetrahedron, 1/2 for the
    triangle).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def reference_measure(self) -> float:
        return 1.0 / 6.0 if self.points.shape[1] == 4 else 0.5


def _perms(p) -> list[tuple]:
    from itertools import permutations

    return sorted(set(permutations(p)))


def _keast11() -> QuadratureRule:
    a = (1.0 + np.sqrt(5.0 / 14.0)) / 4.0
    b = (1.0 - np.sqrt(5.0 / 14.0)) / 4.0
    pts, wts = [(0.25, 0.25, 0.25, 0.25)], [-74.0 / 5625.0]
    for p in _perms((11.0 / 14.0, 1.0 / 14.0, 1.0 / 14.0, 1.0 / 14.0)):
        pts.append(p)
        wts.append(343.0 / 45000.0)
    for p in _perms((a, a, b, b)):
        pts.append(p)
        wts.append(56.0 / 2250.0)
    return QuadratureRule(np.array(pts), np.array(wts), 4)


def _dunavant6() -> QuadratureRule:
    groups = [
        (0.445948490915965, 0.223381589678011),
        (0.091576213509771, 0.109951743655322),
    ]
    pts, wts = [], []
    for a, w in groups:
        for p in _perms((a, a, 1.0 - 2.0 * a)):
            pts.append(p)
            wts.append(w / 2.0)
    return QuadratureRule(np.array(pts), np.array(wts), 4)


TET_RULE = _keast11()
TRI_RULE = _dunavant6()


# ----------------------------------------------------------------------------
# material data


@dataclass(frozen=True)
class MaterialField:
    """Relative permittivity, one entry per region tag.

    Each entry is either a positive constant or a callable mapping an
    ``(n, 3)`` array of points to ``n`` positive values.  Regions not listed
    use ``default``.  ``alpha`` is the recorded lower bound.
    """

    regions: dict[int, float | Callable] = field(default_factory=dict)
    default: float | Callable = 1.0
    alpha: float | None = None

    def __post_init__(self):
        consts = [v for v in [self.default, *self.regions.values()] if not callable(v)]
        if any(not np.isfinite(v) or v <= 0 for v in consts):
            raise ValueError("relative permittivity must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(min(consts)) if consts else None)
        elif any(v < self.alpha for v in consts):
            raise ValueError("permittivity below the declared lower bound alpha")

    @classmethod
    def constant(cls, value: float = 1.0) -> "MaterialField":
        return cls(default=float(value))

    def for_region(self, tag: int):
        return self.regions.get(int(tag), self.default)

    @property
    def is_piecewise_constant(self) -> bool:
        return not callable(self.default) and not any(callable(v) for v in self.regions.values())

    def describe(self) -> str:
        if not self.regions and not callable(self.default):
            return f"{self.default:g}"
        parts = [f"{k}:{'fn' if callable(v) else format(v, 'g')}" for k, v in sorted(self.regions.items())]
        d = "fn" if callable(self.default) else format(self.default, "g")
        return "{" + ", ".join(parts + [f"default:{d}"]) + "}"


# ----------------------------------------------------------------------------
# tetrahedra


def barycentric_gradients(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the four barycentric coordinates and the signed volume."""
    x = np.asarray(x, dtype=float)
    d = x[..., 1:, :] - x[..., :1, :]
    det = np.linalg.det(d)
    if np.any(np.abs(det) <= 1e-300):
        raise ValueError("degenerate tetrahedron")
    # rows of inv(d)^T are grad l_1..l_3
    g = np.swapaxes(np.linalg.inv(d), -1, -2)
    g0 = -g.sum(axis=-2, keepdims=True)
    return np.concatenate([g0, g], axis=-2), det / 6.0


def whitney_edge_eval(x, local_edge: int, bary, vertex_ids=None) -> np.ndarray:
    """Value of the Whitney function of ``local_edge`` at barycentric point ``bary``.

    With ``vertex_ids`` the function is oriented from the lower to the higher
    global vertex index; otherwise the local orientation is used.
    """
    g, _ = barycentric_gradients(x)
    a, b = TET_EDGES[local_edge]
    lam = np.asarray(bary, dtype=float)
    w = lam[..., a, None] * g[..., b, :] - lam[..., b, None] * g[..., a, :]
    if vertex_ids is not None and vertex_ids[a] > vertex_ids[b]:
        w = -w
    return w


def whitney_curls(x) -> np.ndarray:
    """Constant curls ``2 grad l_a x grad l_b`` of the six edge functions, shape (..., 6, 3)."""
    g, _ = barycentric_gradients(x)
    return 2.0 * np.cross(g[..., _EA, :], g[..., _EB, :])


def local_curl_curl(x) -> np.ndarray:
    g, vol = barycentric_gradients(x)
    if np.any(vol <= 0):
        raise ValueError("tetrahedron must be positively oriented")
    c = 2.0 * np.cross(g[..., _EA, :], g[..., _EB, :])
    return vol[..., None, None] * np.einsum("...ik,...jk->...ij", c, c)


def _edge_mass(gg: np.ndarray, measure: np.ndarray, ea, eb, nsimplex: int) -> np.ndarray:
    """Exact mass of Whitney functions from gradient Gram matrix ``gg``.

    Uses ``int l_i l_j = measure * (1 + delta_ij) / ((d+1)(d+2))`` with ``d`` the
    simplex dimension.
    """
    denom = {3: 20.0, 2: 12.0}[nsimplex]
    eye = np.eye(nsimplex + 1)

    def lam(i, j):
        return (1.0 + eye[np.ix_(i, j)]) / denom

    a, b = np.asarray(ea), np.asarray(eb)
    m = (
        lam(a, a) * gg[..., b[:, None], b[None, :]]
        - lam(a, b) * gg[..., b[:, None], a[None, :]]
        - lam(b, a) * gg[..., a[:, None], b[None, :]]
        + lam(b, b) * gg[..., a[:, None], a[None, :]]
    )
    return measure[..., None, None] * m


def local_mass(x, eps=1.0, quad: QuadratureRule | None = None) -> np.ndarray:
    """``int_K eps W_i . W_j`` for the six edge functions.

    A constant ``eps`` (scalar or one value per tetrahedron) uses the exact
    formula unless ``quad`` is given; a callable ``eps`` is always integrated with
    ``quad`` (default: the degree-4 rule).
    """
    x = np.asarray(x, dtype=float)
    g, vol = barycentric_gradients(x)
    if np.any(vol <= 0):
        raise ValueError("tetrahedron must be positively oriented")
    if not callable(eps) and quad is None:
        e = np.asarray(eps, dtype=float)
        if np.any(e <= 0):
            raise ValueError("relative permittivity must be positive")
        gg = np.einsum("...ik,...jk->...ij", g, g)
        return np.asarray(e)[..., None, None] * _edge_mass(gg, vol, _EA, _EB, 3)

    quad = quad or TET_RULE
    lam = quad.points  # (q, 4)
    phys = np.einsum("qv,...vk->...qk", lam, x)
    if callable(eps):
        flat = phys.reshape(-1, 3)
        ev = np.asarray(eps(flat), dtype=float).reshape(phys.shape[:-1])
    else:
        ev = np.broadcast_to(np.asarray(eps, dtype=float)[..., None], phys.shape[:-1])
    if np.any(ev <= 0):
        raise ValueError("relative permittivity must be positive")
    # W (..., q, 6, 3)
    w = lam[:, _EA, None] * g[..., None, _EB, :] - lam[:, _EB, None] * g[..., None, _EA, :]
    m = np.einsum("q,...q,...qik,...qjk->...ij", quad.weights, ev, w, w)
    return 6.0 * vol[..., None, None] * m


# ----------------------------------------------------------------------------
# triangles


def triangle_geometry(p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Intrinsic surface gradients of the P1 hats, area and unit normal.

    The normal is ``(p1 - p0) x (p2 - p0)`` normalized, so the vertex order
    determines orientation.
    """
    p = np.asarray(p, dtype=float)
    n = np.cross(p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :])
    twice = np.linalg.norm(n, axis=-1)
    if np.any(twice <= 1e-300):
        raise ValueError("degenerate triangle")
    n = n / twice[..., None]
    g = np.stack(
        [np.cross(n, p[..., (i + 2) % 3, :] - p[..., (i + 1) % 3, :]) for i in range(3)], axis=-2
    ) / twice[..., None, None]
    return g, 0.5 * twice, n


def surface_curls(g: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Vector surface curl ``grad_G phi x nu`` of each hat on a flat face."""
    return np.cross(g, n[..., None, :])


def local_surface_stiffness(p, use_curl: bool = False) -> np.ndarray:
    """``int_F grad_G phi_i . grad_G phi_j`` (or the same with surface curls)."""
    g, area, n = triangle_geometry(p)
    if use_curl:
        g = surface_curls(g, n)
    return area[..., None, None] * np.einsum("...ik,...jk->...ij", g, g)


def _face_kernels(gt: np.ndarray, area: np.ndarray, n: np.ndarray):
    """Surface pairings from tangential hat gradients ``gt`` (..., 3, 3)."""
    gg = np.einsum("...ik,...jk->...ij", gt, gt)
    mt = _edge_mass(gg, area, _TA, _TB, 2)
    # int_F W_e = |F|/3 (grad l_b - grad l_a)
    wint = (area[..., None, None] / 3.0) * (gt[..., _TB, :] - gt[..., _TA, :])
    curls = surface_curls(gt, n)
    bc = np.einsum("...ik,...jk->...ij", wint, curls)
    bg = np.einsum("...ik,...jk->...ij", wint, gt)
    return bc, bg, mt


def face_pairings_from_tets(x_tet, opposite) -> tuple[np.ndarray, ...]:
    """Boundary pairings for the face of each tetrahedron opposite ``opposite``.

    The tangential traces are taken from the volume Whitney functions as
    ``(nu x W) x nu``, i.e. the barycentric gradients of the tetrahedron are
    projected onto the face plane.  Returns ``(Bc, Bg, Mt, S, area, normal)``
    in the face-local vertex order ``TET_FACES[opposite]`` and face edge order
    ``((0,1),(0,2),(1,2))``.
    """
    x_tet = np.asarray(x_tet, dtype=float)
    opposite = np.asarray(opposite)
    g, _ = barycentric_gradients(x_tet)
    local = np.asarray(TET_FACES)[opposite]  # (..., 3)
    gf = np.take_along_axis(g, local[..., None], axis=-2)
    pf = np.take_along_axis(x_tet, local[..., None], axis=-2)
    _, area, n = triangle_geometry(pf)
    gt = gf - np.einsum("...ik,...k->...i", gf, n)[..., None] * n[..., None, :]
    bc, bg, mt = _face_kernels(gt, area, n)
    s = area[..., None, None] * np.einsum("...ik,...jk->...ij", gt, gt)
    return bc, bg, mt, s, area, n


def local_boundary_pairings(tri, tet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(Bc, Bg, Mt)`` for one boundary triangle and its adjacent tetrahedron.

    ``Bc[i, j] = int_F curl_G phi_j . (W_i)_T``, ``Bg`` the same with
    ``grad_G phi_j`` and ``Mt[i, j] = int_F (W_i)_T . (W_j)_T``.  Rows follow the
    triangle's edges ``((0,1),(0,2),(1,2))`` in the given vertex order and the
    normal points away from the tetrahedron's fourth vertex.
    """
    tri = np.asarray(tri, dtype=float)
    tet = np.asarray(tet, dtype=float)
    idx = []
    for p in tri:
        hit = np.nonzero(np.all(np.isclose(tet, p, rtol=0, atol=1e-12), axis=1))[0]
        if len(hit) != 1:
            raise ValueError("triangle is not a face of the tetrahedron")
        idx.append(int(hit[0]))
    if len(set(idx)) != 3:
        raise ValueError("triangle is not a face of the tetrahedron")
    opp = ({0, 1, 2, 3} - set(idx)).pop()
    g, vol = barycentric_gradients(tet)
    gf = g[idx]
    _, area, n = triangle_geometry(tri)
    if np.dot(n, tri[0] - tet[opp]) < 0:
        n = -n
    gt = gf - np.outer(gf @ n, n)
    return _face_kernels(gt, np.asarray(area), n)
