"""Sparse direct factorizations for symmetric (indefinite) systems.

Backends, in order of preference for ``backend="auto"``:

``pardiso``  MKL Pardiso through ``pypardiso``, symmetric indefinite mode
             (real matrices only).
``superlu``  SciPy's SuperLU with a METIS nested-dissection permutation when
             ``pymetis`` is installed, and SuperLU's own minimum-degree
             ordering otherwise.
"""

from __future__ import annotations

import glob
import logging
import os
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

logger = logging.getLogger(__name__)


def _locate_mkl() -> None:
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    for root in (sys.prefix, "/usr/local", "/usr"):
        hits = sorted(glob.glob(os.path.join(root, "lib*", "libmkl_rt.so*")), key=len)
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def _pardiso_available() -> bool:
    _locate_mkl()
    try:
        import pypardiso  # noqa: F401
    except (ImportError, OSError):
        return False
    return True


def _metis_available() -> bool:
    try:
        import pymetis  # noqa: F401
    except ImportError:
        return False
    return True


def available_backends() -> list[str]:
    out = []
    if _pardiso_available():
        out.append("pardiso")
    out.append("superlu-metis" if _metis_available() else "superlu")
    return out


class Factorization:
    """A factorized square matrix; ``solve`` accepts vectors or column blocks."""

    def __init__(self, matrix, backend: str = "auto"):
        m = sp.csr_matrix(matrix)
        self.shape = m.shape
        self.dtype = m.dtype
        if backend == "auto":
            use = np.isrealobj(m.data) and _is_symmetric(m) and _pardiso_available()
            backend = "pardiso" if use else "superlu"
        if backend == "pardiso":
            self._init_pardiso(m)
        elif backend == "superlu":
            self._init_superlu(m)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def _init_pardiso(self, m):
        import pypardiso

        upper = sp.triu(m, format="csr")
        upper.sort_indices()
        solver = pypardiso.PyPardisoSolver(mtype=-2)
        try:
            solver.factorize(upper)
        except pypardiso.pardiso_wrapper.PyPardisoError as exc:
            raise RuntimeError(f"Pardiso factorization failed: {exc}") from None
        self._upper = upper
        self._pardiso = solver
        self.backend = "pardiso"

    def _init_superlu(self, m):
        perm = None
        if _metis_available() and m.shape[0] > 200:
            import pymetis

            s = (abs(m) + abs(m.T)).tocsr()
            s.setdiag(0)
            s.eliminate_zeros()
            adj = pymetis.CSRAdjacency(adj_starts=s.indptr, adjacent=s.indices)
            perm, _ = pymetis.nested_dissection(adj)
            perm = np.asarray(perm, dtype=np.int64)
        if perm is not None:
            pm = m[perm][:, perm].tocsc()
            lu = sla.splu(pm, permc_spec="NATURAL", diag_pivot_thresh=0.01, options=dict(SymmetricMode=True))
            self.backend = "superlu-metis"
        else:
            lu = sla.splu(m.tocsc(), permc_spec="MMD_AT_PLUS_A")
            self.backend = "superlu"
        self._lu = lu
        self._perm = perm

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if np.iscomplexobj(b) and np.isrealobj(np.empty(0, self.dtype)):
            return self._solve_real(b.real) + 1j * self._solve_real(b.imag)
        return self._solve_real(b)

    def _solve_real(self, b):
        if self.backend == "pardiso":
            return self._pardiso_real(b)
        dt = np.result_type(b, self.dtype, float)
        if self._perm is None:
            return self._lu.solve(np.ascontiguousarray(b, dtype=dt))
        p = self._perm
        x = np.empty(b.shape, dtype=dt)
        x[p] = self._lu.solve(np.ascontiguousarray(b[p], dtype=dt))
        return x

    def _pardiso_real(self, b):
        return self._pardiso.solve(self._upper, np.asarray(b, dtype=float))


def _is_symmetric(m) -> bool:
    d = abs(m - m.T)
    return d.nnz == 0 or d.max() <= 1e-12 * abs(m).max()


def factorize(matrix, backend: str = "auto", check: bool = True) -> Factorization:
    """Factorize ``matrix``; with ``check`` a random solve must reach a small residual."""
    f = Factorization(matrix, backend)
    if check:
        m = sp.csr_matrix(matrix)
        b = np.random.default_rng(12345).standard_normal(m.shape[0])
        x = f.solve(b)
        if not np.all(np.isfinite(x)) or np.linalg.norm(m @ x - b) > 1e-6 * np.linalg.norm(b):
            raise RuntimeError("factorization is numerically singular")
    return f


def condition_estimate(matrix, fact: Factorization) -> float:
    """Estimate of ``||M||_1 ||M^{-1}||_1`` for a symmetric ``M``."""
    m = sp.csr_matrix(matrix)
    n = m.shape[0]
    inv = sla.LinearOperator((n, n), matvec=fact.solve, rmatvec=fact.solve, dtype=float)
    return float(sla.onenormest(m) * sla.onenormest(inv))
