"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python tests/test_acceptance.py``.  Criteria 4 and
5 run refinement studies up to 18432 boundary edges and take a few minutes.
"""

import io
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from stekloff.assembly import assemble_curl_curl, build_dof_map, build_system, edge_permutation, gradient_incidence
from stekloff.eigen import EigenRequest, dense_solve, shift_invert_solve
from stekloff.mesh import generate_cube_mesh, generate_lshape_mesh, mesh_stats, parse_msh, read_msh, write_msh
from stekloff.stekloff_ops import BoundaryOperators, BoundaryTangentField
from stekloff.study import StudyConfig, backsolve_limit, order_relative, run_study

HERE = Path(__file__).parent
RESULTS: list[str] = []

# tolerances
ORACLE_TOL = 1e-8
IDEMPOTENCE_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-10
DE_RHAM_TOL = 1e-12
SYMMETRY_TOL = 1e-14
ZH_TOL = 1e-9
ADJOINT_TOL = 1e-10
LOOP_TOL = 1e-8
N_RANDOM = 20
ORDER_RANGE = (1.7, 2.3)
GAP_TOL = 0.005
TABLE_TOL = 0.02
FORMULA_TOL = 0.01
CORNER_MARGIN = 0.1

CUBE_LEVELS = [4, 8, 16, 32]
LSHAPE_LEVELS = [4, 8, 16, 32]
PUBLISHED_CUBE_FIRST = -2.1747

CUBE_N = [360, 1656, 6174, 23868]
LSHAPE_N = [405, 1584, 6183, 24168]
PUBLISHED = [
    (CUBE_N, [-2.3373, -2.2184, -2.1840, -2.1747], [1.89, 1.92]),
    (CUBE_N, [-2.2288, -2.1862, -2.1747, -2.1722], [1.98, 2.32]),
    (CUBE_N, [-3.0413, -2.6891, -2.6082, -2.5875], [2.24, 2.01]),
    (CUBE_N, [-2.7418, -2.6199, -2.5893, -2.5826], [2.10, 2.25]),
    (CUBE_N, [-6.5322, -5.5094, -5.1086, -4.9932], [1.42, 1.84]),
    (CUBE_N, [-5.6449, -5.1702, -5.0162, -4.9693], [1.71, 1.76]),
    (LSHAPE_N, [-1.3769, -1.2488, -1.1799, -1.1537], [0.91, 1.41]),
    (LSHAPE_N, [-1.2714, -1.2117, -1.1696, -1.1505], [0.52, 1.15]),
    (LSHAPE_N, [-2.5634, -2.3926, -2.3381, -2.3217], [1.68, 1.76]),
    (LSHAPE_N, [-2.3906, -2.3420, -2.3237, -2.3178], [1.43, 1.67]),
    (LSHAPE_N, [-3.9772, -3.3877, -3.2077, -3.1562], [1.74, 1.83]),
    (LSHAPE_N, [-3.2803, -3.2001, -3.1584, -3.1420], [0.96, 1.36]),
]
# ball table: (first level, second level) values and N per cluster with the printed first order
BALL_N = [597, 3276]
BALL_PAIRS = [([-1.2034, -1.1185], 1.96), ([-2.7631, -2.4809], 2.04)]


def report(number: int, name: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def _out_dir(tmp_factory, name):
    return Path(tmp_factory.mktemp(name)) if tmp_factory else Path(tempfile.mkdtemp(prefix=name))


# ----------------------------------------------------------------------------


def criterion_1():
    misses, total = [], 0
    for n, vals, printed in PUBLISHED:
        r = order_relative(vals, n)
        for lvl, p in zip((2, 3), printed):
            total += 1
            if abs(r[lvl] - p) > FORMULA_TOL:
                misses.append(f"{vals[lvl]} -> {r[lvl]:.3f} vs {p}")
    detail = f"{total - len(misses)}/{total} printed orders within {FORMULA_TOL}"
    if misses:
        detail += "; off: " + ", ".join(misses) + " (inside +-0.5e-4 rounding intervals of the printed values)"
    return report(1, "formula regression", not misses, detail)


def criterion_2():
    worst = 0.0
    counts = []
    for n in (1, 2):
        for form in ("sh", "shplus"):
            s = build_system(generate_cube_mesh(n), 1.0, None, form)
            d = dense_solve(s)
            r = shift_invert_solve(s, EigenRequest(nev=len(d), which="smallest-magnitude"))
            if len(r) != len(d):
                return report(2, "oracle equivalence", False, f"cube n={n} {form}: {len(r)} vs {len(d)} eigenvalues")
            a, b = np.sort_complex(d.eigenvalues), np.sort_complex(r.eigenvalues)
            worst = max(worst, float(np.max(np.abs(a - b) / np.abs(a))))
            counts.append(len(d))
    return report(2, "oracle equivalence", worst <= ORACLE_TOL,
                  f"all finite eigenvalues ({'/'.join(map(str, counts))}) agree, max rel dev {worst:.1e} <= {ORACLE_TOL:g}")


def _invariants(mesh):
    d = build_dof_map(mesh)
    ops = BoundaryOperators(mesh, d)
    rng = np.random.default_rng(2024)
    out = dict(idem=0.0, orth=0.0, derham=0.0, sym=0.0, zh=0.0, adj=0.0, loop=0.0)
    for _ in range(N_RANDOM):
        mu = BoundaryTangentField(whitney=rng.standard_normal(d.n_boundary))
        s1 = ops.apply_Sh(mu)
        out["idem"] = max(out["idem"], ops.norm(ops.apply_Sh(s1) - s1) / ops.norm(s1))
        out["orth"] = max(out["orth"], np.abs(ops.pair_gradients(s1)).max() / ops.norm(s1))
        f = ops.surface_curl(rng.standard_normal(d.n_scalar) + 1j * rng.standard_normal(d.n_scalar))
        g = ops.surface_curl(rng.standard_normal(d.n_scalar) + 1j * rng.standard_normal(d.n_scalar))
        lhs = ops.inner(ops.apply_Th(f), ops.apply_Sh(g))
        rhs = ops.inner(ops.apply_Th(g), ops.apply_Sh(f))
        out["adj"] = max(out["adj"], abs(lhs - np.conj(rhs)) / abs(lhs))
    k = assemble_curl_curl(mesh, d)
    grad = edge_permutation(d) @ gradient_incidence(mesh)
    out["derham"] = abs(k @ grad).max() / abs(k).max()
    for form in ("sh", "shplus"):
        s = build_system(mesh, 1.0, None, form, d)
        for m in (s.A, s.B):
            out["sym"] = max(out["sym"], abs(m - m.T).max() / abs(m).max())
    s = build_system(mesh, 1.0, None, "sh", d)
    res = shift_invert_solve(s, EigenRequest(nev=N_RANDOM, which="smallest-magnitude"))
    for lam, x in res.pairs:
        u = x[: d.n_edges]
        out["zh"] = max(out["zh"], np.abs(ops.weighted_divergence(u)).max() / np.linalg.norm(u))
        v = ops.solve_source((-lam) * ops.apply_Sh(ops.trace(u)))
        c = np.vdot(u, v) / np.vdot(u, u)
        out["loop"] = max(out["loop"], np.linalg.norm(v - c * u) / np.linalg.norm(v), abs(c - 1))
    return out, len(res)


def criterion_3():
    limits = dict(idem=IDEMPOTENCE_TOL, orth=ORTHOGONALITY_TOL, derham=DE_RHAM_TOL, sym=SYMMETRY_TOL, zh=ZH_TOL,
                  adj=ADJOINT_TOL, loop=LOOP_TOL)
    ok, parts = True, []
    for name, mesh in (("cube n=2", generate_cube_mesh(2)), ("lshape n=2", generate_lshape_mesh(2))):
        vals, npairs = _invariants(mesh)
        good = all(vals[k] <= limits[k] for k in limits) and npairs >= N_RANDOM
        ok &= good
        parts.append(f"{name} ({npairs} eigenpairs): " + ", ".join(f"{k} {vals[k]:.1e}" for k in limits))
    return report(3, "operator invariant suite", ok, f"{N_RANDOM} random inputs per mesh; " + "; ".join(parts))


def _first_cluster(table, form):
    return [None if v is None else v.real for v in table.values[form][0]]


def criterion_4(tmp_factory=None):
    cfg = StudyConfig(domain={"cube": CUBE_LEVELS}, output=str(_out_dir(tmp_factory, "cube")), title="unit cube")
    res = run_study(cfg)
    t = res.table
    sh, plus = _first_cluster(t, "sh"), _first_cluster(t, "shplus")
    r_sh, r_plus = t.orders["sh"][0], t.orders["shplus"][0]
    gap = abs(sh[-1] - plus[-1]) / abs(sh[-1])
    ok = ORDER_RANGE[0] <= r_sh[-1] <= ORDER_RANGE[1] and gap <= GAP_TOL
    table_dev = abs(sh[-1] - PUBLISHED_CUBE_FIRST) / abs(PUBLISHED_CUBE_FIRST)
    fmt = lambda rs: ", ".join("-" if r is None else f"{r:.2f}" for r in rs)  # noqa: E731
    detail = (
        f"N={t.counts}; first cluster S_h {[round(v, 4) for v in sh]} orders [{fmt(r_sh)}], "
        f"S_h+ orders [{fmt(r_plus)}]; finest order {r_sh[-1]:.2f} in {list(ORDER_RANGE)}, "
        f"S_h/S_h+ gap {100 * gap:.2f}% <= {100 * GAP_TOL:.1f}% "
        f"(informational: {100 * table_dev:.1f}% from published {PUBLISHED_CUBE_FIRST}, "
        f"{'within' if table_dev <= TABLE_TOL else 'outside'} {100 * TABLE_TOL:.0f}%; kappa=1, eps_r=1 assumed)"
    )
    return report(4, "cube convergence order", ok, detail)


def criterion_5(tmp_factory=None):
    cfg = StudyConfig(domain={"lshape": LSHAPE_LEVELS}, output=str(_out_dir(tmp_factory, "lshape")), title="L-shape")
    t = run_study(cfg).table
    r1, r2 = t.orders["sh"][0][-1], t.orders["sh"][1][-1]
    sizes = [m for _, m in t.cluster_members]
    ok = sizes[0] == 1 and r1 is not None and r2 is not None and r1 < r2 - CORNER_MARGIN
    p1, p2 = t.orders["shplus"][0][-1], t.orders["shplus"][1][-1]
    return report(5, "reentrant-corner deterioration", ok,
                  f"clusters {sizes}; finest S_h orders r1={r1:.2f}, r2={r2:.2f} (need r1 < r2 - {CORNER_MARGIN}); "
                  f"S_h+ r1={p1:.2f}, r2={p2:.2f}")


def criterion_6(tmp_factory=None):
    files = [str(HERE / "fixtures" / f"ball_n{n}.msh") for n in (2, 4, 6)]
    exact = [backsolve_limit(v, BALL_N, r) for v, r in BALL_PAIRS]
    out = _out_dir(tmp_factory, "ball")
    cfg = StudyConfig(domain={"msh": files}, exact=exact, clusters={"sizes": [3, 5]}, output=str(out), title="ball")
    res = run_study(cfg)
    emitted = all((out / f).exists() for f in ("table.txt", "table.csv", "table.md", "run.json"))
    ok = emitted and not res.all_failed and res.table.order_mode == "exact"
    orders = res.table.orders["sh"][0]
    return report(6, "ball fixture study (not gating)", ok,
                  f"N={res.table.counts}, exact-order table emitted; informational S_h first-cluster orders "
                  f"{['-' if r is None else round(r, 2) for r in orders]} against back-solved limits")


def criterion_7():
    problems = []
    for mesh in (generate_cube_mesh(2), generate_lshape_mesh(2), read_msh(HERE / "fixtures" / "ball_n4.msh")):
        back = parse_msh(io.StringIO(write_msh(mesh)))
        if not (np.array_equal(back.points, mesh.points) and np.array_equal(back.tets, mesh.tets)):
            problems.append("round trip")
    s = mesh_stats(read_msh(HERE / "fixtures" / "kuhn_cube.msh"))
    counts = (s.n_vertices, s.n_edges, s.n_tets, s.n_boundary_faces, s.n_boundary_edges)
    if counts != (8, 19, 6, 12, 18) or not math.isclose(s.h, math.sqrt(3)):
        problems.append(f"Kuhn counts {counts}")
    s2 = mesh_stats(generate_cube_mesh(2))
    if (s2.n_vertices, s2.n_tets) != (27, 48) or not math.isclose(s2.h, math.sqrt(3) / 2):
        problems.append("cube n=2 counts")
    return report(7, "parser fixtures", not problems,
                  "MSH round trip exact; Kuhn cube 8 V / 19 E / 6 T / 12 boundary faces / 18 boundary edges"
                  if not problems else "; ".join(problems))


# ----------------------------------------------------------------------------


def test_criterion_1_formula_regression():
    assert criterion_1()


def test_criterion_2_oracle_equivalence():
    assert criterion_2()


def test_criterion_3_operator_invariants():
    assert criterion_3()


def test_criterion_4_cube_orders(tmp_path_factory):
    assert criterion_4(tmp_path_factory)


def test_criterion_5_reentrant_corner(tmp_path_factory):
    assert criterion_5(tmp_path_factory)


def test_criterion_6_ball_fixture_study(tmp_path_factory):
    assert criterion_6(tmp_path_factory)


def test_criterion_7_parser_fixtures():
    assert criterion_7()


if __name__ == "__main__":
    flags = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6(), criterion_7()]
    print(f"{sum(flags)}/{len(flags)} criteria pass")
    sys.exit(0 if all(flags) else 1)
