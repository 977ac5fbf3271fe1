"""Command-line entry point ``stekloff``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .assembly import Formulation, build_system, export_matrix_market
from .eigen import EigenRequest, EigenSolverError, shift_invert_solve, write_spectrum_csv
from .mesh import MeshError, dump_mesh, generate_cube_mesh, generate_lshape_mesh, euler_characteristics, mesh_stats, read_msh, validate_mesh
from .study import ConfigError, StudyConfig, order_exact, order_relative, parse_eps, run_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _study(args) -> int:
    try:
        cfg = StudyConfig.from_json(args.config)
        if args.output:
            cfg.output = args.output
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_study(cfg)
    print(result.table.to_text(), end="")
    for lvl in result.levels:
        for k, msg in lvl.errors.items():
            print(f"level {lvl.index + 1} ({lvl.label}) {k}: {msg}", file=sys.stderr)
    print(f"wrote {result.output}", file=sys.stderr)
    return EXIT_SOLVER if result.all_failed else EXIT_OK


def _solve(args) -> int:
    try:
        eps = parse_eps(args.eps)
        form = Formulation.parse(args.formulation)
        if not args.kappa > 0:
            raise ConfigError("kappa must be positive")
        req = EigenRequest(nev=args.nev, shift=args.shift, which=args.which, seed=args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        mesh = _load_mesh(args.mesh)
    except (OSError, MeshError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    system = build_system(mesh, args.kappa, eps, form.value)
    if args.export:
        out = Path(args.export)
        out.mkdir(parents=True, exist_ok=True)
        export_matrix_market(out / "A.mtx", system.A, f"A, kappa={args.kappa:g}")
        export_matrix_market(out / "B.mtx", system.B, f"B, formulation={form.value}")
    try:
        res = shift_invert_solve(system, req)
    except EigenSolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"# kappa = {args.kappa:g}, eps_r = {eps.describe()}, formulation = {form.value}, shift = {res.shift:g}")
    print(f"# boundary edges = {system.dofs.n_boundary}, pencil dimension = {system.dofs.n_dofs}")
    order = np.argsort(np.abs(res.eigenvalues.real), kind="stable")
    for i, j in enumerate(order):
        lam = res.eigenvalues[j]
        print(f"{i + 1:3d}  {lam.real: .10f}  {lam.imag: .2e}  residual {res.residuals[j]:.1e}")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        write_spectrum_csv(args.out, res)
    return EXIT_OK


def _read_values(path) -> tuple[list[float], list[list[float]], list[str]]:
    """CSV with a count column ``N`` followed by one or more value columns."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ConfigError(f"{path} is empty")
    try:
        float(rows[0][0])
        names = [f"value{k}" for k in range(1, len(rows[0]))]
    except ValueError:
        names, rows = rows[0][1:], rows[1:]
    if not names or any(len(r) != len(names) + 1 for r in rows):
        raise ConfigError("expected rows of the form N,value[,value...]")
    try:
        counts = [float(r[0]) for r in rows]
        cols = [[complex(r[k + 1].replace(" ", "").replace("i", "j")) for r in rows] for k in range(len(names))]
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry: {exc}") from None
    return counts, cols, names


def _orders(args) -> int:
    try:
        counts, cols, names = _read_values(args.values)
        if args.exact is None and len(counts) < 3:
            raise ConfigError("relative orders need at least 3 levels")
        if args.exact is not None and len(counts) < 2:
            raise ConfigError("exact orders need at least 2 levels")
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("N," + ",".join(f"{n},{n}_order" for n in names))
    per_col = [order_exact(c, args.exact, counts) if args.exact is not None else order_relative(c, counts) for c in cols]
    for i, n in enumerate(counts):
        cells = []
        for c, r in zip(cols, per_col):
            cells += [f"{c[i].real:.4f}", "" if r[i] is None else f"{r[i]:.2f}"]
        print(f"{n:g}," + ",".join(cells))
    return EXIT_OK


def _load_mesh(arg: str):
    """MSH path, or a generator spec ``cube:<n>`` / ``lshape:<n>``."""
    kind, _, n = arg.partition(":")
    if kind in ("cube", "lshape") and n.isdigit() and not Path(arg).exists():
        return (generate_cube_mesh if kind == "cube" else generate_lshape_mesh)(int(n))
    return read_msh(arg)


def _mesh_info(args) -> int:
    try:
        mesh = read_msh(args.msh)
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump:
        print(dump_mesh(mesh), end="")
        return EXIT_OK
    s = mesh_stats(mesh)
    chi, chi_b = euler_characteristics(mesh)
    info = {
        "vertices": s.n_vertices,
        "edges": s.n_edges,
        "tetrahedra": s.n_tets,
        "boundary_faces": s.n_boundary_faces,
        "boundary_edges": s.n_boundary_edges,
        "boundary_vertices": s.n_boundary_vertices,
        "h": s.h,
        "euler_volume": chi,
        "euler_boundary": chi_b,
        "regions": sorted(set(mesh.regions.tolist())),
        "problems": validate_mesh(mesh),
    }
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        for k, v in info.items():
            print(f"{k:18s} {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stekloff", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("study", help="run a refinement study from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help="override the configured output directory")
    s.set_defaults(func=_study)

    s = sub.add_parser("solve", help="eigenvalues on one mesh")
    s.add_argument("--mesh", required=True, help="MSH file, or cube:<n> / lshape:<n>")
    s.add_argument("--kappa", type=float, default=1.0)
    s.add_argument("--eps", default="1", help="number, JSON region map or JSON object")
    s.add_argument("--formulation", default="sh", choices=["sh", "shplus"])
    s.add_argument("--nev", type=int, default=8)
    s.add_argument("--shift", type=float, default=-2.0)
    s.add_argument("--which", default="nearest-shift", choices=["nearest-shift", "smallest-magnitude"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the spectrum CSV here")
    s.add_argument("--export", help="directory for MatrixMarket A.mtx and B.mtx")
    s.set_defaults(func=_solve)

    s = sub.add_parser("orders", help="convergence orders from a CSV of N,value columns")
    s.add_argument("--values", required=True)
    s.add_argument("--exact", type=float, default=None)
    s.set_defaults(func=_orders)

    s = sub.add_parser("mesh-info", help="topology and validity report for an MSH file")
    s.add_argument("msh")
    s.add_argument("--json", action="store_true")
    s.add_argument("--dump", action="store_true", help="print the canonical mesh dump")
    s.set_defaults(func=_mesh_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
