import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from src.plate_obstacle.utils.exceptions import NotPositiveDefiniteError, SolverConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10
DIRECT_SOLVE_LIMIT = 300_000
REFINEMENT_STEPS = 2


@dataclass
class SolveReport:
    solution: np.ndarray
    relative_residual: float
    iterations: int
    method: str


def _relative_residual(matrix, x, b, b_norm) -> float:
    if b_norm == 0.0:
        return float(np.linalg.norm(matrix @ x))
    return float(np.linalg.norm(matrix @ x - b) / b_norm)


class SpdFactorization:
    """
        Sparse LU factorization of a symmetric matrix computed without pivoting on a symmetric fill-reducing
        ordering, which amounts to an LDL^T factorization: the matrix is positive definite exactly when every pivot
        is positive. The factorization can be reused for several right-hand sides.

        Raises:
            NotPositiveDefiniteError: If a pivot is non-positive or the factorization breaks down.
    """

    def __init__(self, matrix: sparse.spmatrix):
        self.matrix = sparse.csc_matrix(matrix)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f'Expected a square matrix, got shape {self.matrix.shape}.')
        diagonal = self.matrix.diagonal()
        if np.any(diagonal <= 0.0):
            raise NotPositiveDefiniteError(f'{np.count_nonzero(diagonal <= 0.0)} non-positive diagonal entries.')
        try:
            self._lu = splinalg.splu(self.matrix, permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0,
                                     options={'SymmetricMode': True})
        except RuntimeError as e:
            raise NotPositiveDefiniteError(f'Factorization failed: {e}') from e

        pivots = self._lu.U.diagonal()
        scale = np.abs(pivots).max(initial=0.0)
        if np.any(pivots <= scale * np.finfo(float).eps):
            raise NotPositiveDefiniteError(f'Matrix of size {self.matrix.shape[0]} is not positive definite '
                                           f'(smallest pivot {pivots.min():.3e}).')

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))


def _solve_direct(matrix: sparse.spmatrix, b: np.ndarray, tol: float) -> SolveReport:
    factorization = SpdFactorization(matrix)
    b_norm = float(np.linalg.norm(b))
    x = factorization.solve(b)
    residual = _relative_residual(factorization.matrix, x, b, b_norm)
    steps = 0
    while residual > tol and steps < REFINEMENT_STEPS:
        x = x + factorization.solve(b - factorization.matrix @ x)
        residual = _relative_residual(factorization.matrix, x, b, b_norm)
        steps += 1

    if residual > tol:
        message = f'Direct solve reached relative residual {residual:.3e} above tolerance {tol:.1e}.'
        logger.warning(message)
        warnings.warn(message, category=RuntimeWarning)
    return SolveReport(solution=x, relative_residual=residual, iterations=0, method='direct')


def _solve_cg(matrix: sparse.spmatrix, b: np.ndarray, tol: float) -> SolveReport:
    matrix = sparse.csr_matrix(matrix)
    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0.0):
        raise NotPositiveDefiniteError('Matrix has a non-positive diagonal entry.')
    n = matrix.shape[0]
    preconditioner = splinalg.LinearOperator((n, n), matvec=lambda r: r / diagonal, dtype=float)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = splinalg.cg(matrix, b, rtol=tol, atol=0.0, maxiter=20 * n, M=preconditioner, callback=count)
    if info > 0:
        raise SolverConvergenceError(f'Conjugate gradients did not converge within {20 * n} iterations.')
    if info < 0:
        raise NotPositiveDefiniteError('Conjugate gradients broke down.')

    residual = _relative_residual(matrix, x, b, float(np.linalg.norm(b)))
    return SolveReport(solution=x, relative_residual=residual, iterations=iterations, method='cg')


def solve_spd(matrix: sparse.spmatrix,
              b: np.ndarray,
              tol: float = DEFAULT_TOLERANCE,
              direct_limit: int = DIRECT_SOLVE_LIMIT) -> SolveReport:
    """
        Solves a sparse symmetric positive definite system.

        Systems up to `direct_limit` unknowns are factorized directly, with iterative refinement when the residual
        exceeds `tol`; larger systems use Jacobi-preconditioned conjugate gradients.

        Args:
            matrix (sparse.spmatrix): The SPD matrix.
            b (np.ndarray): Right-hand side.
            tol (float): Target relative residual ||Ax - b|| / ||b||.
            direct_limit (int): Largest size solved directly.

        Raises:
            NotPositiveDefiniteError: If the matrix is found not to be positive definite.
            SolverConvergenceError: If conjugate gradients exhaust 20 N iterations.

        Returns:
            SolveReport: Solution and solve diagnostics.
    """
    b = np.asarray(b, dtype=float)
    if matrix.shape[0] == 0:
        return SolveReport(solution=np.zeros(0), relative_residual=0.0, iterations=0, method='direct')
    if matrix.shape[0] <= direct_limit:
        return _solve_direct(matrix, b, tol)
    return _solve_cg(matrix, b, tol)
