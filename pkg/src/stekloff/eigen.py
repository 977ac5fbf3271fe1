"""Finite eigenvalues of the pencil ``A x = -lambda B x``.

The sparse path is shift-invert Arnoldi (ARPACK) on ``(A + sigma B)^{-1} B``.
Two kinds of eigenvectors are not Stekloff modes and are removed:

* ``B x = 0`` (interior edges, surface gradients, ...) gives infinite
  eigenvalues, i.e. Ritz values ``nu = 0`` of the transformed operator;
* ``x = (0, 0, q)`` satisfies ``A x = 0`` for every ``q`` because the scalar
  rows of ``A`` are empty, giving ``lambda = 0`` with a vanishing field part.

The second family would sit at ``nu = 1/sigma`` and hide every eigenvalue
farther than ``|sigma|`` from the shift.  The subspace on which the scalar
block row of ``B`` vanishes is invariant under the operator and contains all
eigenvectors with ``lambda != 0``, so Arnoldi vectors are projected onto it.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as sla

from .assembly import BlockSystem
from .linsolve import factorize

logger = logging.getLogger(__name__)

SHIFT_LADDER = (-2.0, -1.5, -3.0, -0.5)
NU_CUTOFF = 1e-10
IMAG_WARN = 1e-6


class EigenSolverError(RuntimeError):
    pass


@dataclass
class EigenRequest:
    nev: int = 8
    shift: float = -2.0
    max_iterations: int = 5000
    ncv: int | None = None
    tol: float = 1e-8
    which: str = "nearest-shift"  # or "smallest-magnitude"
    seed: int = 0
    backend: str = "auto"

    def __post_init__(self):
        if self.nev < 1:
            raise ValueError("nev must be at least 1")
        if self.ncv is not None and self.ncv <= self.nev:
            raise ValueError("subspace dimension must exceed nev")
        if self.which not in ("nearest-shift", "smallest-magnitude"):
            raise ValueError(f"unknown selection rule {self.which!r}")


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    shift: float
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def pairs(self):
        return list(zip(self.eigenvalues, self.vectors.T))


def pencil_residuals(system: BlockSystem, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``||A x + lambda B x|| / ||x||`` column by column."""
    r = system.A @ x + (system.B @ x) * lam[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(x, axis=0)


def _constraint_projector(system: BlockSystem):
    """Replace the scalar block so that the scalar rows of ``B x`` vanish."""
    dofs = system.dofs
    sb, sq = dofs.boundary_slice, dofs.scalar_slice
    if dofs.n_scalar == 0:
        return lambda x: x
    B = system.B.tocsr()
    bqq = B[sq, sq].tocsc()
    bqb = B[sq, sb].tocsr()
    if bqq.nnz == 0:
        raise EigenSolverError("scalar block of B is empty")
    solve = factorize(bqq, backend="superlu").solve

    def project(x):
        y = np.array(x, copy=True)
        y[sq] = -solve(np.asarray(bqb @ x[sb]))
        return y

    return project


def _field_fraction(system: BlockSystem, x: np.ndarray) -> np.ndarray:
    e = system.dofs.edge_slice
    return np.linalg.norm(x[e], axis=0) / np.linalg.norm(x, axis=0)


def _factor(system: BlockSystem, sigma: float, backend: str = "auto"):
    return factorize(system.A + sigma * system.B, backend=backend)


def shift_invert_solve(system: BlockSystem, req: EigenRequest | None = None) -> EigenResult:
    """Finite eigenpairs closest to ``req.shift`` (or of smallest magnitude)."""
    req = req or EigenRequest()
    if system.B.nnz == 0 or not np.any(system.B.data):
        raise EigenSolverError("B is identically zero: the pencil has no finite eigenvalues")
    ladder = [req.shift] + [s for s in SHIFT_LADDER if s != req.shift]
    last = None
    for sigma in ladder:
        try:
            lu = _factor(system, sigma, req.backend)
        except RuntimeError as exc:
            logger.warning("factorization at shift %g failed (%s); trying next shift", sigma, exc)
            last = exc
            continue
        return _arnoldi(system, req, sigma, lu)
    raise EigenSolverError(f"factorization failed for every shift in {ladder}: {last}")


def _arnoldi(system: BlockSystem, req: EigenRequest, sigma: float, lu) -> EigenResult:
    n = system.A.shape[0]
    dtype = np.result_type(system.A.dtype, system.B.dtype, float)
    project = _constraint_projector(system)
    B = system.B

    def op(x):
        return lu.solve(np.asarray(B @ project(x)).astype(dtype, copy=False))

    operator = sla.LinearOperator((n, n), matvec=op, dtype=dtype)
    rng = np.random.default_rng(req.seed)
    v0 = op(rng.standard_normal(n).astype(dtype))
    rank_cap = n - 2
    k = min(req.nev + 2 if req.which == "nearest-shift" else 2 * req.nev + 4, rank_cap)
    warnings: list[str] = []
    while True:
        ncv = min(req.ncv if req.ncv and req.ncv > k + 1 else max(2 * k + 1, 20), n)
        try:
            nu, x = sla.eigs(operator, k=k, which="LM", v0=v0, ncv=ncv, maxiter=req.max_iterations)
        except sla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"Arnoldi did not converge in {req.max_iterations} iterations") from exc
        big = np.max(np.abs(nu)) if len(nu) else 0.0
        if big == 0.0:
            raise EigenSolverError("all Ritz values vanish: no finite eigenvalues")
        keep = np.abs(nu) >= NU_CUTOFF * big
        nu, x = nu[keep], x[:, keep]
        lam = sigma - 1.0 / nu
        keep = _field_fraction(system, x) > 1e-8
        lam, x = lam[keep], x[:, keep]
        if len(lam) == 0:
            raise EigenSolverError("all Ritz values are spurious")
        done = len(lam) >= req.nev
        if req.which == "smallest-magnitude" and done:
            radius = np.max(np.abs(lam - sigma))
            mags = np.sort(np.abs(lam))
            done = mags[req.nev - 1] + abs(sigma) < radius or len(nu) < k
        if done or k >= rank_cap:
            break
        k = min(k + max(req.nev, 4), rank_cap)
    if req.which == "nearest-shift":
        order = np.argsort(np.abs(lam - sigma), kind="stable")
    else:
        order = np.argsort(np.abs(lam), kind="stable")
    order = order[: req.nev]
    lam, x = lam[order], x[:, order]
    x = x / np.linalg.norm(x, axis=0)
    res = pencil_residuals(system, lam, x)
    if len(lam) < req.nev:
        warnings.append(f"only {len(lam)} finite eigenvalues found (requested {req.nev})")
    if np.any(res > req.tol):
        raise EigenSolverError(f"eigen-residuals {res.max():.2e} exceed tolerance {req.tol:.1e}")
    warnings += _imag_warnings(lam)
    for w in warnings:
        logger.warning(w)
    return EigenResult(lam.astype(complex), x.astype(complex), res, float(sigma), warnings)


def _imag_warnings(lam) -> list[str]:
    out = []
    for v in lam:
        if abs(v.imag) > IMAG_WARN * abs(v):
            out.append(f"eigenvalue {v:.6g} has a significant imaginary part")
    return out


def dense_solve(system: BlockSystem, cap: int = 2000, shift: float = -2.0, tol: float = 1e-8) -> EigenResult:
    """All finite nonzero eigenpairs by dense QZ (verification oracle)."""
    n = system.A.shape[0]
    if n > cap:
        raise ValueError(f"pencil dimension {n} exceeds the dense cap {cap}")
    a = system.A.toarray()
    b = system.B.toarray()
    (alpha, beta), vr = scipy.linalg.eig(a, -b, homogeneous_eigvals=True)
    na = np.linalg.norm(a, 1)
    nb = np.linalg.norm(b, 1)
    if nb == 0:
        raise EigenSolverError("B is identically zero: the pencil has no finite eigenvalues")
    # |lambda| = |alpha/beta|; keep values well inside the range a finite pencil can produce
    finite = np.abs(beta) * na > 1e-9 * np.abs(alpha) * nb
    lam = np.full(n, np.inf, dtype=complex)
    lam[finite] = alpha[finite] / beta[finite]
    vr = vr / np.linalg.norm(vr, axis=0)
    nonzero = finite & (np.abs(lam) > 1e-8 * na / nb)
    nonzero &= _field_fraction(system, vr) > 1e-8
    lam, x = lam[nonzero], vr[:, nonzero]
    order = np.argsort(np.abs(lam - shift), kind="stable")
    lam, x = lam[order], x[:, order]
    res = pencil_residuals(system, lam, x)
    warnings = _imag_warnings(lam)
    bad = res > tol * max(1.0, na)
    if np.any(bad):
        warnings.append(f"{int(bad.sum())} dense eigenpairs with large residual")
    return EigenResult(lam, x, res, float(shift), warnings)


def cluster_eigenvalues(values, sizes=None, gap: float = 0.05) -> list[np.ndarray]:
    """Group eigenvalues ordered by ascending ``|Re lambda|``.

    With ``sizes`` the groups are consecutive runs of those lengths; otherwise a
    new group starts wherever the relative gap between neighbours exceeds ``gap``.
    """
    v = np.asarray(values, dtype=complex).ravel()
    v = v[np.argsort(np.abs(v.real), kind="stable")]
    if sizes is not None:
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes) or sum(sizes) != len(v):
            raise ValueError(f"cluster sizes {sizes} do not sum to the {len(v)} eigenvalues")
        cuts = np.cumsum(sizes)[:-1]
        return [np.asarray(c) for c in np.split(v, cuts)]
    if len(v) == 0:
        return []
    groups, cur = [], [v[0]]
    for prev, nxt in zip(v[:-1], v[1:]):
        if abs(nxt - prev) > gap * abs(prev):
            groups.append(np.asarray(cur))
            cur = []
        cur.append(nxt)
    groups.append(np.asarray(cur))
    return groups


def write_spectrum_csv(path, result: EigenResult) -> None:
    order = np.argsort(np.abs(result.eigenvalues.real), kind="stable")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "real", "imag", "residual"])
        for i, j in enumerate(order):
            lam = result.eigenvalues[j]
            w.writerow([i + 1, f"{lam.real:.12e}", f"{lam.imag:.12e}", f"{result.residuals[j]:.3e}"])
