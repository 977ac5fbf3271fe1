import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from stekloff.femcore import (
    TET_RULE,
    TRI_RULE,
    MaterialField,
    barycentric_gradients,
    face_pairings_from_tets,
    local_boundary_pairings,
    local_curl_curl,
    local_mass,
    local_surface_stiffness,
    surface_curls,
    triangle_geometry,
    whitney_curls,
    whitney_edge_eval,
)
from stekloff.mesh import TET_EDGES, TET_FACES

REF = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
RIGHT_TRI = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)

# frozen oracles (hand-derived on the reference tetrahedron)
REF_CURL_01 = np.array([0.0, -2.0, 2.0])
REF_K_01_01 = 4.0 / 3.0
REF_M_01_01 = 1.0 / 12.0  # int (1-y-z)^2 + 2 x^2
RIGHT_TRI_STIFFNESS = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])


def good_tets():
    coords = arrays(np.float64, (4, 3), elements=st.floats(-1, 1, allow_nan=False, width=64))
    return coords.filter(lambda x: abs(np.linalg.det(x[1:] - x[0])) > 1e-2).map(
        lambda x: x if np.linalg.det(x[1:] - x[0]) > 0 else x[[1, 0, 2, 3]]
    )


def _monomials(dim, degree):
    for total in range(degree + 1):
        for exps in np.ndindex(*(total + 1,) * dim):
            if sum(exps) == total:
                yield exps


@pytest.mark.parametrize("rule, dim", [(TET_RULE, 3), (TRI_RULE, 2)])
def test_quadrature_exactness(rule, dim):
    assert rule.weights.sum() == pytest.approx(rule.reference_measure, abs=1e-15)
    xyz = rule.points[:, 1:]
    for exps in _monomials(dim, rule.degree):
        exact = math.prod(math.factorial(e) for e in exps) / math.factorial(sum(exps) + dim)
        approx = rule.weights @ np.prod(xyz ** np.array(exps), axis=1)
        assert approx == pytest.approx(exact, abs=1e-14), exps


def test_reference_curl():
    assert np.allclose(whitney_curls(REF)[0], REF_CURL_01, atol=1e-15)


def test_reference_curl_curl_entry():
    assert local_curl_curl(REF)[0, 0] == pytest.approx(REF_K_01_01, rel=1e-15)


def test_reference_mass_entry():
    assert local_mass(REF)[0, 0] == pytest.approx(REF_M_01_01, rel=1e-14)

    def integrand(z, y, x):
        w = whitney_edge_eval(REF, 0, [1 - x - y - z, x, y, z])
        return w @ w

    brute, _ = integrate.tplquad(integrand, 0, 1, 0, lambda x: 1 - x, 0, lambda x, y: 1 - x - y, epsabs=1e-13)
    assert brute == pytest.approx(REF_M_01_01, rel=1e-10)


def test_whitney_duality():
    # int_e W_e' . t ds = delta_{e e'} along every edge of a tet
    x = REF + np.array([[0.1, 0, 0], [0, 0.2, 0], [0, 0, 0.05], [0.3, 0.1, 0.0]])
    gp, gw = np.polynomial.legendre.leggauss(4)
    s, w = 0.5 * (gp + 1), 0.5 * gw
    for k, (a, b) in enumerate(TET_EDGES):
        t = x[b] - x[a]
        for j in range(6):
            lam = np.zeros((len(s), 4))
            lam[:, a], lam[:, b] = 1 - s, s
            vals = whitney_edge_eval(x, j, lam) @ t
            assert w @ vals == pytest.approx(float(j == k), abs=1e-14)


def test_global_orientation_flips_sign():
    lam = np.full(4, 0.25)
    local = whitney_edge_eval(REF, 0, lam)
    assert np.allclose(whitney_edge_eval(REF, 0, lam, vertex_ids=[5, 2, 3, 4]), -local)
    assert np.allclose(whitney_edge_eval(REF, 0, lam, vertex_ids=[1, 2, 3, 4]), local)


def _gradient_vectors():
    g = np.zeros((4, 6))
    for k, (a, b) in enumerate(TET_EDGES):
        g[b, k], g[a, k] = 1.0, -1.0
    return g


@settings(max_examples=30, deadline=None)
@given(good_tets())
def test_curl_curl_structure(x):
    k = local_curl_curl(x)
    scale = np.abs(k).max()
    assert np.allclose(k, k.T, atol=1e-14 * scale)
    ev = np.linalg.eigvalsh(k)
    assert ev.min() > -1e-12 * scale
    assert np.sum(ev > 1e-10 * scale) == 3
    assert np.abs(k @ _gradient_vectors().T).max() <= 1e-13 * scale


@settings(max_examples=30, deadline=None)
@given(good_tets(), st.floats(0.1, 10))
def test_mass_structure(x, c):
    m = local_mass(x)
    assert np.allclose(m, m.T, atol=1e-15 * np.abs(m).max())
    assert np.linalg.eigvalsh(m).min() > 0
    assert np.allclose(local_mass(x, eps=c), c * m, rtol=1e-14, atol=0)
    assert np.allclose(local_mass(x, quad=TET_RULE), m, rtol=1e-12, atol=1e-14 * np.abs(m).max())


@settings(max_examples=20, deadline=None)
@given(good_tets(), st.permutations(range(4)))
def test_kernels_relabel(x, perm):
    perm = list(perm)
    y = x[perm]
    if np.linalg.det(y[1:] - y[0]) < 0:
        return
    idx, sgn = [], []
    for a, b in TET_EDGES:
        pa, pb = perm[a], perm[b]
        k = TET_EDGES.index((min(pa, pb), max(pa, pb)))
        idx.append(k)
        sgn.append(1.0 if pa < pb else -1.0)
    s = np.outer(sgn, sgn)
    for fn in (local_curl_curl, local_mass):
        kx, ky = fn(x), fn(y)
        assert np.allclose(ky, s * kx[np.ix_(idx, idx)], atol=1e-13 * np.abs(kx).max())


def test_mass_variable_eps():
    def eps(p):
        return 1.0 + p[:, 0] + 2.0 * p[:, 2]

    m = local_mass(REF, eps=eps)

    def integrand(z, y, x):
        w = whitney_edge_eval(REF, 1, [1 - x - y - z, x, y, z])
        return (1 + x + 2 * z) * (w @ w)

    brute, _ = integrate.tplquad(integrand, 0, 1, 0, lambda x: 1 - x, 0, lambda x, y: 1 - x - y, epsabs=1e-13)
    assert m[1, 1] == pytest.approx(brute, rel=1e-10)


def test_mass_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        local_mass(REF, eps=lambda p: p[:, 0] - 0.5)
    with pytest.raises(ValueError):
        MaterialField(default=-1.0)


def test_material_field():
    f = MaterialField({2: 4.0}, default=1.5)
    assert f.for_region(2) == 4.0 and f.for_region(1) == 1.5
    assert f.alpha == 1.5 and f.is_piecewise_constant
    with pytest.raises(ValueError):
        MaterialField({2: 0.5}, alpha=1.0)


def test_right_triangle_stiffness():
    assert np.allclose(local_surface_stiffness(RIGHT_TRI), RIGHT_TRI_STIFFNESS, atol=1e-15)


triangles = arrays(np.float64, (3, 3), elements=st.floats(-1, 1, allow_nan=False, width=64)).filter(
    lambda p: np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) > 1e-2
)


@settings(max_examples=30, deadline=None)
@given(triangles)
def test_surface_stiffness_properties(p):
    s = local_surface_stiffness(p)
    scale = np.abs(s).max()
    assert np.allclose(s.sum(axis=1), 0, atol=1e-13 * scale)
    assert np.allclose(local_surface_stiffness(p, use_curl=True), s, atol=1e-14 * scale)
    ev = np.linalg.eigvalsh(s)
    assert abs(ev[0]) < 1e-12 * scale and ev[1] > 0


def _tangential_trace(v, n):
    return np.cross(np.cross(n, v), n)


@settings(max_examples=20, deadline=None)
@given(good_tets(), st.integers(0, 3))
def test_trace_compatibility(x, opp):
    """Tangential trace of 3D Whitney functions equals the 2D Whitney function."""
    face = TET_FACES[opp]
    g2, _, n = triangle_geometry(x[list(face)])
    lam_face = TRI_RULE.points
    for (i, j) in ((0, 1), (0, 2), (1, 2)):
        a, b = face[i], face[j]
        k = TET_EDGES.index((min(a, b), max(a, b)))
        sign = 1.0 if a < b else -1.0
        lam = np.zeros((len(lam_face), 4))
        lam[:, list(face)] = lam_face
        w3 = sign * _tangential_trace(whitney_edge_eval(x, k, lam), n)
        w2 = lam_face[:, i, None] * g2[j] - lam_face[:, j, None] * g2[i]
        assert np.allclose(w3, w2, atol=1e-13 * max(1.0, np.abs(w2).max()))


def test_boundary_pairings_oracle():
    """Bottom face of the reference tet: outward normal -z, brute-force integrals."""
    tri = RIGHT_TRI
    bc, bg, mt = local_boundary_pairings(tri, REF)
    g, _, n = triangle_geometry(tri)
    n = -n  # outward
    assert np.allclose(n, [0, 0, -1])
    curls = np.cross(g, n)

    def w2(e, x, y):
        lam = np.array([1 - x - y, x, y])
        a, b = ((0, 1), (0, 2), (1, 2))[e]
        return lam[a] * g[b] - lam[b] * g[a]

    def brute(f):
        v, _ = integrate.dblquad(lambda y, x: f(x, y), 0, 1, 0, lambda x: 1 - x, epsabs=1e-13)
        return v

    for i in range(3):
        for j in range(3):
            assert bc[i, j] == pytest.approx(brute(lambda x, y: curls[j] @ w2(i, x, y)), abs=1e-12)
            assert bg[i, j] == pytest.approx(brute(lambda x, y: g[j] @ w2(i, x, y)), abs=1e-12)
            assert mt[i, j] == pytest.approx(brute(lambda x, y: w2(i, x, y) @ w2(j, x, y)), abs=1e-12)
    assert np.linalg.eigvalsh(mt).min() > 0


def test_boundary_pairings_reject_foreign_triangle():
    with pytest.raises(ValueError, match="not a face"):
        local_boundary_pairings(RIGHT_TRI + 5.0, REF)


@settings(max_examples=20, deadline=None)
@given(good_tets(), st.integers(0, 3))
def test_face_pairings_match_intrinsic(x, opp):
    bc, bg, mt, s, area, n = face_pairings_from_tets(x, opp)
    p = x[list(TET_FACES[opp])]
    g, a2, n2 = triangle_geometry(p)
    assert area == pytest.approx(a2)
    assert np.allclose(n, n2)
    assert np.allclose(s, local_surface_stiffness(p), atol=1e-12 * np.abs(s).max())
    # outward: normal points away from the opposite vertex
    assert np.dot(n, p[0] - x[opp]) > 0
    assert np.allclose(mt, mt.T) and np.linalg.eigvalsh(mt).min() > 0
    assert np.allclose(surface_curls(g, n2) @ n2, 0, atol=1e-12 * np.abs(g).max())


def test_barycentric_gradients_degenerate():
    with pytest.raises(ValueError):
        barycentric_gradients(np.zeros((4, 3)))
