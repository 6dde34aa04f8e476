"""Direct solves for symmetric indefinite saddle point systems.

Two factorizations are available.

* Generic square matrices use SuperLU (``scipy.sparse.linalg.splu``) with
  COLAMD column ordering and threshold partial pivoting.  Zero and tiny
  pivots are reported with their column index.
* Saddle point matrices whose leading ``n_primal`` unknowns carry a
  symmetric positive definite block are factorized as quasi-definite
  matrices: after a symmetric diagonal scaling, ``-delta`` is added to the
  constraint diagonal and a sparse LDL^T factorization (QDLDL with AMD
  ordering) is computed.  Iterative refinement against the unperturbed matrix
  removes the regularization.  If refinement stalls the matrix is handed to
  the SuperLU path, which then either solves it or reports singularity.

Every solve checks the relative residual ``||K x - b|| / ||b||``.
"""
from dataclasses import dataclass, field

import numpy as np
import qdldl
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SingularSystemError, SolverAccuracyError

RESIDUAL_TOL = 1e-10
PIVOT_TOL = 1e-13
REGULARIZATION = 1e-10
MAX_REFINEMENT = 25


def _relative_residual(mat, x, rhs):
    r = rhs - mat @ x
    bnorm = np.linalg.norm(rhs, axis=0)
    rnorm = np.linalg.norm(r, axis=0)
    rel = rnorm / np.where(bnorm > 0, bnorm, 1.0)
    return r, (float(np.max(rel)) if np.size(rel) else 0.0)


class Factorization:
    """LU factors of a square sparse matrix.

    Parameters
    ----------
    mat : sparse matrix
    tol : float
        Relative residual accepted by :meth:`solve`.

    Raises
    ------
    SingularSystemError
        If the matrix is structurally or numerically singular.
    """

    def __init__(self, mat, tol=RESIDUAL_TOL, permc_spec="COLAMD"):
        mat = sp.csc_matrix(mat, dtype=float)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix must be square, got {mat.shape}")
        self.mat = mat
        self.tol = tol
        _check_structure(mat)
        try:
            self._lu = spla.splu(mat, permc_spec=permc_spec, diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}",
                                      pivot=_locate_zero_pivot(mat, permc_spec)) from exc
        udiag = np.abs(self._lu.U.diagonal())
        scale = max(abs(mat).max(), 1.0)
        bad = np.flatnonzero(udiag <= PIVOT_TOL * scale)
        if bad.size:
            col = int(np.argsort(self._lu.perm_c)[bad[0]])
            raise SingularSystemError(
                f"numerically singular: pivot {bad[0]} (column {col}) is {udiag[bad[0]]:.3e}",
                pivot=col)

    @property
    def shape(self):
        return self.mat.shape

    def _raw_solve(self, rhs):
        return self._lu.solve(rhs)

    def solve(self, rhs):
        """Solve for one right-hand side or several (columns of ``rhs``).

        Raises
        ------
        SolverAccuracyError
            If the relative residual exceeds the tolerance.
        """
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.mat.shape[0]:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {self.mat.shape[0]}")
        x = self._raw_solve(rhs)
        r, rel = _relative_residual(self.mat, x, rhs)
        if rel > 0.01 * self.tol:
            x = x + self._raw_solve(r)
            r, rel = _relative_residual(self.mat, x, rhs)
        if rel > self.tol:
            raise SolverAccuracyError(f"relative residual {rel:.3e} above {self.tol:.1e}", rel)
        return x


class QuasiDefiniteFactorization(Factorization):
    """Regularized LDL^T factorization of a symmetric saddle point matrix.

    Parameters
    ----------
    mat : sparse matrix
        Symmetric matrix ``[[P, D^T], [D, 0]]`` where ``P`` is the leading
        ``n_primal`` block.  Primal unknowns with a zero diagonal must couple
        to the constraint rows only; they receive ``+delta``, the constraint
        rows ``-delta``, which makes the perturbed matrix quasi-definite.
    n_primal : int
        Number of primal unknowns.
    """

    def __init__(self, mat, n_primal, tol=RESIDUAL_TOL, delta=REGULARIZATION):
        mat = sp.csc_matrix(mat, dtype=float)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix must be square, got {mat.shape}")
        self.mat = mat
        self.tol = tol
        self.n_primal = n_primal
        _check_structure(mat)
        n = mat.shape[0]
        csr = mat.tocsr()
        diag = np.abs(mat.diagonal())
        s = np.ones(n)
        # primal unknowns with a positive diagonal: unit diagonal
        pos = np.zeros(n, dtype=bool)
        pos[:n_primal] = diag[:n_primal] > 0
        s[pos] = 1.0 / np.sqrt(diag[pos])
        # constraint rows: unit norm against the scaled primal unknowns
        dual = np.arange(n_primal, n)
        coupling = csr[dual][:, np.flatnonzero(pos)] @ sp.diags(s[pos])
        s[dual] = 1.0 / _safe(_row_norms(coupling))
        # primal unknowns with zero diagonal (e.g. mean value multipliers):
        # unit norm against the scaled constraint rows
        zero = np.flatnonzero(~pos[:n_primal])
        if zero.size:
            coupling = csr[zero][:, dual] @ sp.diags(s[dual])
            s[zero] = 1.0 / _safe(_row_norms(coupling))
        self._scale = s
        S = sp.diags(s)
        scaled = (S @ mat @ S).tocsc()
        reg = np.zeros(n)
        reg[zero] = delta
        reg[n_primal:] = -delta
        self._fallback = None
        try:
            self._ldl = qdldl.Solver(sp.triu(scaled + sp.diags(reg), format="csc"), upper=True)
        except RuntimeError:
            # zero pivot in LDL^T: not quasi-definite after all, use pivoted LU
            self._fallback = Factorization(mat, tol=tol)

    def _raw_solve(self, rhs):
        s = self._scale
        if rhs.ndim == 1:
            return s * self._ldl.solve(s * rhs)
        return np.column_stack([s * self._ldl.solve(s * rhs[:, k]) for k in range(rhs.shape[1])])

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.mat.shape[0]:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {self.mat.shape[0]}")
        if self._fallback is not None:
            return self._fallback.solve(rhs)
        x = self._raw_solve(rhs)
        r, rel = _relative_residual(self.mat, x, rhs)
        for _ in range(MAX_REFINEMENT):
            if rel <= 0.01 * self.tol:
                break
            prev = rel
            x = x + self._raw_solve(r)
            r, rel = _relative_residual(self.mat, x, rhs)
            if rel > 0.5 * prev and rel > self.tol:
                break
        if rel > self.tol:
            # refinement stalled: the matrix is (nearly) singular or badly scaled
            self._fallback = Factorization(self.mat, tol=self.tol)
            return self._fallback.solve(rhs)
        return x


def _locate_zero_pivot(mat, permc_spec):
    """Column of the first tiny pivot of a slightly shifted copy of ``mat``."""
    scale = max(abs(mat).max(), 1.0)
    shifted = (mat + PIVOT_TOL * scale * sp.identity(mat.shape[0])).tocsc()
    try:
        lu = spla.splu(shifted, permc_spec=permc_spec, diag_pivot_thresh=1.0)
    except RuntimeError:
        return None
    bad = np.flatnonzero(np.abs(lu.U.diagonal()) <= 10 * PIVOT_TOL * scale)
    return int(np.argsort(lu.perm_c)[bad[0]]) if bad.size else None


def _row_norms(mat):
    mat = sp.csr_matrix(mat)
    return np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())


def _safe(v):
    return np.where(v > 0, v, 1.0)


def _check_structure(mat):
    csc = mat.tocsc()
    empty_col = np.flatnonzero(np.diff(csc.indptr) == 0)
    if empty_col.size:
        raise SingularSystemError(f"structurally singular: empty column {empty_col[0]}",
                                  pivot=int(empty_col[0]))
    csr = mat.tocsr()
    empty_row = np.flatnonzero(np.diff(csr.indptr) == 0)
    if empty_row.size:
        raise SingularSystemError(f"structurally singular: empty row {empty_row[0]}",
                                  pivot=int(empty_row[0]))


def factorize(mat, n_primal=None, tol=RESIDUAL_TOL):
    """Factorize ``mat``; saddle point matrices pass ``n_primal``."""
    if n_primal is None:
        return Factorization(mat, tol=tol)
    return QuasiDefiniteFactorization(mat, n_primal, tol=tol)


def solve(fact, rhs):
    return fact.solve(rhs)


@dataclass
class SaddleSystem:
    """Monolithic symmetric block system.

    Attributes
    ----------
    blocks : list of (name, size)
        Unknown blocks in order; equations are ordered the same way.
    matrix : sparse matrix
    rhs : ndarray
        One right-hand side or several as columns.
    n_primal : int
        Size of the leading positive definite block.
    """

    blocks: list
    matrix: sp.spmatrix
    rhs: np.ndarray = None
    n_primal: int = None
    _offsets: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._offsets = {}
        start = 0
        for name, size in self.blocks:
            self._offsets[name] = (start, start + size)
            start += size
        if self.matrix.shape != (start, start):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match blocks totalling {start}")
        if self.n_primal is None:
            self.n_primal = self.blocks[0][1]

    def block(self, name):
        return slice(*self._offsets[name])

    def split(self, x):
        """Dictionary of solution blocks."""
        return {name: x[self.block(name)] for name, _ in self.blocks}

    def factorize(self):
        return factorize(self.matrix, n_primal=self.n_primal)

    def solve(self, rhs=None):
        rhs = self.rhs if rhs is None else rhs
        return self.factorize().solve(rhs)


def export_matrix_market(mat, path):
    scipy.io.mmwrite(path, sp.coo_matrix(mat))
