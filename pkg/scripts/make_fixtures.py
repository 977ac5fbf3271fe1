"""Write the MSH fixtures used by the tests and the ball example study.

Balls are produced by pushing a Kuhn-subdivided cube [-1, 1]^3 radially onto
the unit ball (x -> x |x|_inf / |x|_2); only vertices move, so every face is
flat and the boundary is a polyhedral sphere approximation.
"""

import argparse
from pathlib import Path

import numpy as np

from stekloff.mesh import build_mesh, generate_cube_mesh, validate_mesh, write_msh


def ball_mesh(n: int):
    cube = generate_cube_mesh(n)
    x = 2.0 * cube.points - 1.0
    r2 = np.linalg.norm(x, axis=1)
    rinf = np.abs(x).max(axis=1)
    scale = np.divide(rinf, r2, out=np.ones_like(r2), where=r2 > 0)
    mesh = build_mesh(x * scale[:, None], cube.tets)
    problems = validate_mesh(mesh)
    if problems:
        raise RuntimeError("; ".join(problems))
    return mesh


def single_tet():
    return build_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float), np.array([[0, 1, 2, 3]]))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    p.add_argument("--ball", type=int, nargs="*", default=[2, 4, 6])
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_msh(single_tet(), out / "single_tet.msh")
    write_msh(generate_cube_mesh(1), out / "kuhn_cube.msh")
    for n in args.ball:
        write_msh(ball_mesh(n), out / f"ball_n{n}.msh")
    print(f"wrote fixtures to {out}")


if __name__ == "__main__":
    main()
