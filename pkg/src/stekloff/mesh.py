"""Tetrahedral meshes with the edge and boundary topology needed by edge elements.

A :class:`Mesh` is built once from point coordinates and tetrahedron connectivity
and is treated as immutable afterwards.  Construction canonicalizes every
tetrahedron to positive orientation, derives the global edge table (edges
oriented from the lower to the higher vertex index) and re-derives the boundary
triangulation from the tetrahedron faces.
"""

from __future__ import annotations

import io
import itertools
import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

#: Local edges of a tetrahedron, as pairs of local vertex indices.
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

#: Local faces of a positively oriented tetrahedron, ordered so the induced
#: normal points away from the opposite vertex (face k is opposite vertex k).
TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

DUMP_HEADER = "stekloff-mesh 1"


class MeshError(ValueError):
    """Raised for meshes that cannot be used by the solver."""


@dataclass(frozen=True)
class EdgeTable:
    """Global edges and the per-tetrahedron local-to-global edge map.

    ``edges[e] = (low, high)`` with ``low < high``.  ``tet_edges[t, k]`` is the
    global edge of local edge ``TET_EDGES[k]`` in tetrahedron ``t`` and
    ``tet_edge_signs[t, k]`` is +1 when the local direction runs from the lower
    to the higher global vertex index, -1 otherwise.
    """

    edges: np.ndarray
    tet_edges: np.ndarray
    tet_edge_signs: np.ndarray

    def __len__(self) -> int:
        return len(self.edges)

    def lookup(self, a: int, b: int) -> int:
        """Global index of the edge joining vertices ``a`` and ``b``."""
        lo, hi = (a, b) if a < b else (b, a)
        key = _edge_keys(np.array([[lo, hi]]))[0]
        pos = np.searchsorted(self._keys, key)
        if pos >= len(self.edges) or self._keys[pos] != key:
            raise KeyError((a, b))
        return int(pos)

    @property
    def _keys(self) -> np.ndarray:
        return _edge_keys(self.edges)


@dataclass(frozen=True)
class BoundaryTriangulation:
    """Boundary faces induced by the volume mesh.

    ``faces`` are outward oriented vertex triples.  ``face_tets`` and
    ``face_local`` give the adjacent tetrahedron and the local index of the
    vertex opposite to the face.  ``face_edges``/``face_edge_signs`` map the
    local triangle edges ``((0,1),(0,2),(1,2))`` to global edges.
    """

    faces: np.ndarray
    face_tets: np.ndarray
    face_local: np.ndarray
    face_edges: np.ndarray
    face_edge_signs: np.ndarray
    edge_ids: np.ndarray
    vertex_ids: np.ndarray
    face_tags: np.ndarray

    def __len__(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class MeshStats:
    h: float
    n_boundary_edges: int
    n_edges: int
    n_vertices: int
    n_tets: int
    n_boundary_faces: int
    n_boundary_vertices: int


@dataclass(frozen=True)
class Mesh:
    points: np.ndarray
    tets: np.ndarray
    regions: np.ndarray
    edge_table: EdgeTable
    boundary: BoundaryTriangulation
    # unique faces (sorted triples) and how many tets share each; kept for validation
    face_keys: np.ndarray = field(repr=False)
    face_counts: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_edges(self) -> int:
        return len(self.edge_table.edges)

    @property
    def n_faces(self) -> int:
        return len(self.face_keys)

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.points, self.tets)


def signed_volumes(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = points[tets]
    d = x[:, 1:, :] - x[:, :1, :]
    return np.linalg.det(d) / 6.0


def _edge_keys(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64)
    return pairs[:, 0] * (1 << 31) + pairs[:, 1]


def build_mesh(points, tets, regions=None, boundary_tags=None) -> Mesh:
    """Assemble a :class:`Mesh` from raw arrays.

    Tetrahedra with negative orientation are repaired by swapping their last two
    vertices; degenerate ones raise :class:`MeshError`.  ``boundary_tags`` maps a
    sorted vertex triple to a physical tag and is only used for labelling.
    """
    points = np.ascontiguousarray(points, dtype=float)
    tets = np.array(tets, dtype=np.int64, copy=True).reshape(-1, 4)
    if points.ndim != 2 or points.shape[1] != 3:
        raise MeshError("points must be an (N, 3) array")
    if not np.all(np.isfinite(points)):
        raise MeshError("non-finite point coordinates")
    if len(tets) == 0:
        raise MeshError("no tetrahedra")
    if tets.min() < 0 or tets.max() >= len(points):
        raise MeshError("tetrahedron references a missing vertex")
    s = np.sort(tets, axis=1)
    if np.any(s[:, 1:] == s[:, :-1]):
        raise MeshError("tetrahedron with repeated vertex ids")
    if regions is None:
        regions = np.ones(len(tets), dtype=np.int64)
    regions = np.asarray(regions, dtype=np.int64).reshape(-1)
    if len(regions) != len(tets):
        raise MeshError("one region tag per tetrahedron required")

    vol = signed_volumes(points, tets)
    scale = np.max(np.ptp(points, axis=0)) ** 3
    if np.any(np.abs(vol) <= 1e-14 * scale):
        bad = int(np.argmin(np.abs(vol)))
        raise MeshError(f"degenerate tetrahedron {bad} (volume {vol[bad]:.3e})")
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]

    edge_table = _build_edges(tets)
    face_keys, face_counts, boundary = _build_faces(tets, edge_table, boundary_tags)
    return Mesh(points, tets, regions, edge_table, boundary, face_keys, face_counts)


def _build_edges(tets: np.ndarray) -> EdgeTable:
    la = np.array([a for a, _ in TET_EDGES])
    lb = np.array([b for _, b in TET_EDGES])
    va = tets[:, la]
    vb = tets[:, lb]
    lo = np.minimum(va, vb)
    hi = np.maximum(va, vb)
    keys = _edge_keys(np.stack([lo.ravel(), hi.ravel()], axis=1))
    uniq, inverse = np.unique(keys, return_inverse=True)
    edges = np.stack([uniq >> 31, uniq & ((1 << 31) - 1)], axis=1)
    signs = np.where(va < vb, 1, -1).astype(np.int8)
    return EdgeTable(edges, inverse.reshape(-1, 6), signs)


def _build_faces(tets, edge_table, boundary_tags):
    nt = len(tets)
    local = np.array(TET_FACES)
    oriented = tets[:, local]  # (T, 4, 3)
    srt = np.sort(oriented, axis=2).reshape(-1, 3)
    if tets.max() >= 1 << 21:
        raise MeshError("meshes with more than 2**21 vertices are not supported")
    keys = (srt[:, 0] * (1 << 21) + srt[:, 1]) * (1 << 21) + srt[:, 2]
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    on_bnd = counts[inverse] == 1
    flat = np.nonzero(on_bnd)[0]
    face_tets = flat // 4
    face_local = flat % 4
    faces = oriented.reshape(-1, 3)[flat]

    # local triangle edges (0,1), (0,2), (1,2)
    pairs = np.stack([faces[:, [0, 1]], faces[:, [0, 2]], faces[:, [1, 2]]], axis=1)
    lo = np.minimum(pairs[..., 0], pairs[..., 1])
    hi = np.maximum(pairs[..., 0], pairs[..., 1])
    ekeys = _edge_keys(np.stack([lo.ravel(), hi.ravel()], axis=1))
    face_edges = np.searchsorted(_edge_keys(edge_table.edges), ekeys).reshape(-1, 3)
    face_edge_signs = np.where(pairs[..., 0] < pairs[..., 1], 1, -1).astype(np.int8)

    tags = np.zeros(len(faces), dtype=np.int64)
    if boundary_tags:
        for i, f in enumerate(faces):
            tags[i] = boundary_tags.get(tuple(sorted(int(v) for v in f)), 0)

    boundary = BoundaryTriangulation(
        faces=faces,
        face_tets=face_tets,
        face_local=face_local,
        face_edges=face_edges,
        face_edge_signs=face_edge_signs,
        edge_ids=np.unique(face_edges),
        vertex_ids=np.unique(faces),
        face_tags=tags,
    )
    assert len(face_tets) == 0 or face_tets.max() < nt
    return uniq, counts, boundary


# ----------------------------------------------------------------------------
# built-in generators


def _kuhn_tets(cells: np.ndarray, n: int) -> np.ndarray:
    """Six Kuhn tetrahedra for each grid cell (given by integer corner index)."""
    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    out = []
    unit = np.eye(3, dtype=np.int64)
    for perm in itertools.permutations(range(3)):
        c0 = cells
        c1 = c0 + unit[perm[0]]
        c2 = c1 + unit[perm[1]]
        c3 = c2 + unit[perm[2]]
        out.append(np.stack([vid(*c.T) for c in (c0, c1, c2, c3)], axis=1))
    return np.concatenate(out, axis=0)


def _grid_points(n: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, n + 1)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def generate_cube_mesh(n: int) -> Mesh:
    """Kuhn-subdivided ``n x n x n`` grid of the unit cube."""
    if int(n) != n or n < 1:
        raise MeshError(f"cube subdivision must be a positive integer, got {n!r}")
    n = int(n)
    idx = np.arange(n)
    cells = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3)
    return build_mesh(_grid_points(n), _kuhn_tets(cells, n))


def generate_lshape_mesh(n: int) -> Mesh:
    """Unit cube minus the corner octant ``[1/2, 1]^3`` (Fichera-type domain).

    ``n`` is the number of grid cells per unit length and must be even so the
    reentrant corner lies on a grid node.
    """
    if int(n) != n or n < 2 or n % 2:
        raise MeshError(f"L-shape subdivision must be a positive even integer, got {n!r}")
    n = int(n)
    idx = np.arange(n)
    cells = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = (cells + 0.5) / n
    cells = cells[~np.all(centers >= 0.5, axis=1)]
    tets = _kuhn_tets(cells, n)
    pts = _grid_points(n)
    used = np.unique(tets)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return build_mesh(pts[used], remap[tets])


# ----------------------------------------------------------------------------
# statistics and validation


def mesh_stats(mesh: Mesh) -> MeshStats:
    x = mesh.points[mesh.tets]
    diam = np.zeros(len(x))
    for a, b in TET_EDGES:
        diam = np.maximum(diam, np.linalg.norm(x[:, a] - x[:, b], axis=1))
    return MeshStats(
        h=float(diam.max()),
        n_boundary_edges=len(mesh.boundary.edge_ids),
        n_edges=mesh.n_edges,
        n_vertices=mesh.n_vertices,
        n_tets=mesh.n_tets,
        n_boundary_faces=len(mesh.boundary),
        n_boundary_vertices=len(mesh.boundary.vertex_ids),
    )


def euler_characteristics(mesh: Mesh) -> tuple[int, int]:
    """``(V - E + F - T, V_b - E_b + F_b)``."""
    b = mesh.boundary
    chi = mesh.n_vertices - mesh.n_edges + mesh.n_faces - mesh.n_tets
    chi_b = len(b.vertex_ids) - len(b.edge_ids) + len(b.faces)
    return int(chi), int(chi_b)


def validate_mesh(mesh: Mesh) -> list[str]:
    """Check the topological and geometric invariants; returns the violations."""
    problems = []
    tets = mesh.tets
    s = np.sort(tets, axis=1)
    if np.any(s[:, 1:] == s[:, :-1]):
        problems.append("tetrahedron with repeated vertex ids")
    vol = mesh.volumes()
    if np.any(vol <= 0):
        problems.append(f"{int(np.sum(vol <= 0))} tetrahedra with non-positive volume")
    if np.any(mesh.face_counts > 2):
        problems.append(f"face shared by >2 tets ({int(np.sum(mesh.face_counts > 2))} faces)")

    # edge table consistency
    et = mesh.edge_table
    if np.any(et.edges[:, 0] >= et.edges[:, 1]):
        problems.append("edge table entry not oriented low -> high")
    if len(np.unique(_edge_keys(et.edges))) != len(et.edges):
        problems.append("duplicate edge in edge table")
    for k, (a, b) in enumerate(TET_EDGES):
        ge = et.edges[et.tet_edges[:, k]]
        va, vb = tets[:, a], tets[:, b]
        sg = et.tet_edge_signs[:, k]
        ok = np.where(sg > 0, (ge[:, 0] == va) & (ge[:, 1] == vb), (ge[:, 0] == vb) & (ge[:, 1] == va))
        if not np.all(ok):
            problems.append(f"edge sign mismatch on local edge {k}")

    # boundary closed and orientable: each boundary edge used once in each direction
    b = mesh.boundary
    if len(b.faces) == 0:
        problems.append("empty boundary")
    else:
        counts = np.bincount(b.face_edges.ravel(), minlength=mesh.n_edges)[b.edge_ids]
        if np.any(counts != 2):
            problems.append("boundary not closed: boundary edge not shared by exactly 2 boundary faces")
        orient = np.zeros(mesh.n_edges, dtype=np.int64)
        np.add.at(orient, b.face_edges.ravel(), _orient_weights(b))
        if np.any(orient[b.edge_ids] != 0):
            problems.append("boundary surface not consistently oriented")
        x = mesh.points
        p = x[b.faces]
        nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        opp = x[tets[b.face_tets, b.face_local]]
        if np.any(np.einsum("ij,ij->i", nrm, p[:, 0] - opp) <= 0):
            problems.append("boundary face normal not pointing out of the domain")

    chi, chi_b = euler_characteristics(mesh)
    if chi != 1:
        problems.append(f"volume Euler characteristic V-E+F-T = {chi} (expected 1; cavity or handle)")
    if chi_b != 2:
        problems.append(
            f"boundary Euler characteristic = {chi_b} (expected 2; boundary not closed around cavity or not a sphere)"
        )
    return problems


def _orient_weights(b: BoundaryTriangulation) -> np.ndarray:
    # traversal direction of each triangle edge relative to its global orientation;
    # the local edge (0,2) is traversed 2 -> 0 in the cycle 0 -> 1 -> 2 -> 0
    cyc = np.array([1, -1, 1])
    return (b.face_edge_signs.astype(np.int64) * cyc).ravel()


# ----------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII


def _sections(text: str) -> dict[str, list[str]]:
    lines = [ln.strip() for ln in text.splitlines()]
    out: dict[str, list[str]] = {}
    i = 0
    while i < len(lines):
        ln = lines[i]
        if not ln:
            i += 1
            continue
        if not ln.startswith("$") or ln.startswith("$End"):
            raise MeshError(f"malformed section header at line {i + 1}: {ln!r}")
        name = ln[1:]
        end = "$End" + name
        try:
            j = lines.index(end, i + 1)
        except ValueError:
            raise MeshError(f"section ${name} is not terminated by {end}") from None
        out[name] = lines[i + 1 : j]
        i = j + 1
    return out


def parse_msh(data) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII mesh.

    Only 4-node tetrahedra (type 4) and 3-node triangles (type 2) are consumed;
    the first tag of each element is its physical tag.  The boundary is derived
    from the tetrahedra; triangle tags are kept as boundary face labels.
    """
    if isinstance(data, (bytes, bytearray)):
        text = data.decode("ascii")
    elif isinstance(data, str):
        text = data
    else:
        text = data.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")
    sec = _sections(text)
    for name in ("MeshFormat", "Nodes", "Elements"):
        if name not in sec:
            raise MeshError(f"missing ${name} section")
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 3 or not fmt[0].startswith("2"):
        raise MeshError(f"unsupported MSH format {' '.join(fmt)!r} (need 2.2 ASCII)")
    if fmt[1] != "0":
        raise MeshError("binary MSH files are not supported")

    node_lines = sec["Nodes"]
    try:
        n_nodes = int(node_lines[0])
        rows = [ln.split() for ln in node_lines[1 : 1 + n_nodes]]
        ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
        coords = np.array([[float(v) for v in r[1:4]] for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed $Nodes section: {exc}") from None
    if len(ids) != n_nodes:
        raise MeshError("$Nodes section shorter than its declared count")
    index_of: dict[int, int] = {}
    dup = 0
    for k, nid in enumerate(ids):
        if nid in index_of:
            dup += 1
            continue
        index_of[int(nid)] = k
    if dup:
        logger.warning("%d duplicate node ids; first occurrence kept", dup)
    if not np.array_equal(ids, np.arange(1, n_nodes + 1)):
        logger.warning("node ids are not contiguous from 1; remapping")

    elem_lines = sec["Elements"]
    tets, regions, tris = [], [], {}
    skipped: dict[int, int] = {}
    try:
        n_elem = int(elem_lines[0])
        for ln in elem_lines[1 : 1 + n_elem]:
            r = [int(v) for v in ln.split()]
            etype, ntags = r[1], r[2]
            tags = r[3 : 3 + ntags]
            nodes = r[3 + ntags :]
            phys = tags[0] if tags else 0
            if etype == 4:
                tets.append([index_of[v] for v in nodes[:4]])
                regions.append(phys)
            elif etype == 2:
                key = tuple(sorted(index_of[v] for v in nodes[:3]))
                tris[key] = phys
            else:
                skipped[etype] = skipped.get(etype, 0) + 1
    except KeyError as exc:
        raise MeshError(f"element references unknown node {exc}") from None
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed $Elements section: {exc}") from None
    if skipped:
        logger.warning("skipped unsupported element types %s", dict(sorted(skipped.items())))
    if not tets:
        raise MeshError("no tetrahedra found")

    tets = np.array(tets, dtype=np.int64)
    used = np.unique(tets)
    remap = np.full(len(coords), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    if len(used) != len(coords):
        logger.warning("dropping %d nodes not used by any tetrahedron", len(coords) - len(used))
    btags = {}
    for key, tag in tris.items():
        if all(remap[v] >= 0 for v in key):
            btags[tuple(sorted(int(remap[v]) for v in key))] = tag
    mesh = build_mesh(coords[used], remap[tets], regions, btags)
    problems = validate_mesh(mesh)
    if problems:
        raise MeshError("invalid mesh: " + "; ".join(problems))
    return mesh


def read_msh(path: str | os.PathLike) -> Mesh:
    with open(path, "rb") as fh:
        return parse_msh(fh.read())


def write_msh(mesh: Mesh, dest=None) -> str:
    """Write ``mesh`` as MSH 2.2 ASCII; returns the text (and writes ``dest`` if given)."""
    buf = io.StringIO()
    buf.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    buf.write(f"$Nodes\n{mesh.n_vertices}\n")
    for i, (x, y, z) in enumerate(mesh.points.tolist(), start=1):
        buf.write(f"{i} {x!r} {y!r} {z!r}\n")
    buf.write("$EndNodes\n")
    b = mesh.boundary
    n_el = len(b.faces) + mesh.n_tets
    buf.write(f"$Elements\n{n_el}\n")
    k = 1
    for f, tag in zip(b.faces.tolist(), b.face_tags.tolist()):
        buf.write(f"{k} 2 2 {tag} {tag} {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
        k += 1
    for t, reg in zip(mesh.tets.tolist(), mesh.regions.tolist()):
        buf.write(f"{k} 4 2 {reg} {reg} {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}\n")
        k += 1
    buf.write("$EndElements\n")
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w") as fh:
            fh.write(text)
    return text


def dump_mesh(mesh: Mesh) -> str:
    """Canonical plain-text listing of points and tetrahedra (for golden files)."""
    lines = [DUMP_HEADER, f"points {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.points.tolist()]
    lines.append(f"tets {mesh.n_tets}")
    lines += [f"{a} {b} {c} {d} {r}" for (a, b, c, d), r in zip(mesh.tets.tolist(), mesh.regions.tolist())]
    return "\n".join(lines) + "\n"


def load_dump(text: str) -> Mesh:
    lines = text.splitlines()
    if not lines or lines[0] != DUMP_HEADER:
        raise MeshError("not a stekloff mesh dump")
    npts = int(lines[1].split()[1])
    pts = np.array([[float(v) for v in ln.split()] for ln in lines[2 : 2 + npts]])
    nt = int(lines[2 + npts].split()[1])
    rows = np.array([[int(v) for v in ln.split()] for ln in lines[3 + npts : 3 + npts + nt]], dtype=np.int64)
    return build_mesh(pts, rows[:, :4], rows[:, 4])
