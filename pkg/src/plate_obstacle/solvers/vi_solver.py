import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import sparse

from src.plate_obstacle.solvers.linsolve import DEFAULT_TOLERANCE, solve_spd
from src.plate_obstacle.utils.exceptions import SolverConvergenceError

logger = logging.getLogger(__name__)

MAX_PDAS_ITERATIONS = 100
PDAS_CONSTANT_FACTOR = 100.0


@dataclass
class DiscreteSolution:
    """
        Solution of the discrete obstacle problem.

        `multipliers[i]` and `active[i]` belong to the dof `constrained[i]` of `coefficients`; the multiplier of
        every other dof is zero.
    """
    coefficients: np.ndarray
    multipliers: np.ndarray
    constrained: np.ndarray
    active: np.ndarray
    iterations: int
    cycled: bool = False

    @property
    def lambda_mass(self) -> float:
        return float(self.multipliers.sum())

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def constrained_values(self) -> np.ndarray:
        return self.coefficients[self.constrained]

    def with_coefficients(self, coefficients: np.ndarray, constrained: np.ndarray) -> 'DiscreteSolution':
        return replace(self, coefficients=coefficients, constrained=constrained)


def _solve_with_active_set(matrix: sparse.csr_matrix,
                           b: np.ndarray,
                           psi: np.ndarray,
                           constrained: np.ndarray,
                           active: np.ndarray,
                           tol: float) -> tuple[np.ndarray, np.ndarray]:
    if not active.any():
        return solve_spd(matrix, b, tol).solution, np.zeros(constrained.size)

    fixed = constrained[active]
    is_free = np.ones(matrix.shape[0], dtype=bool)
    is_free[fixed] = False
    free = np.flatnonzero(is_free)

    x = np.empty(matrix.shape[0])
    x[fixed] = psi[active]
    if free.size:
        rows = matrix[free]
        rhs = b[free] - rows[:, fixed] @ psi[active]
        x[free] = solve_spd(rows[:, free], rhs, tol).solution

    multipliers = np.zeros(constrained.size)
    multipliers[active] = (matrix[fixed] @ x) - b[fixed]
    return x, multipliers


def pdas(matrix: sparse.spmatrix,
         b: np.ndarray,
         psi: np.ndarray,
         constrained: np.ndarray,
         x0: Optional[np.ndarray] = None,
         lambda0: Optional[np.ndarray] = None,
         c: Optional[float] = None,
         tol: float = DEFAULT_TOLERANCE,
         max_iterations: int = MAX_PDAS_ITERATIONS) -> DiscreteSolution:
    """
        Primal-dual active set method for min 1/2 x^T A x - b^T x subject to x[constrained] >= psi.

        The active set is {i : lambda_i + c (psi_i - x_i) > 0}. Each iteration fixes the active entries to the
        obstacle, solves for the rest and sets lambda = A x - b on the active set. The iteration stops when the
        active set repeats the one just solved for.

        Args:
            matrix (sparse.spmatrix): SPD matrix A.
            b (np.ndarray): Right-hand side.
            psi (np.ndarray): Obstacle values at the constrained entries.
            constrained (np.ndarray): Indices of the constrained entries of x.
            x0 (Optional[np.ndarray]): Starting point; the unconstrained solution when omitted.
            lambda0 (Optional[np.ndarray]): Starting multipliers, zero when omitted.
            c (Optional[float]): Active set constant; 100 times the largest diagonal entry of A when omitted.
            tol (float): Relative residual tolerance of the inner solves.
            max_iterations (int): Cap on the number of inner solves.

        Raises:
            SolverConvergenceError: If the active set has not settled after `max_iterations` solves.
            NotPositiveDefiniteError: If a reduced system is not positive definite.

        Returns:
            DiscreteSolution: Solution, multipliers and active set, indexed like `matrix`.
    """
    matrix = sparse.csr_matrix(matrix)
    b = np.asarray(b, dtype=float)
    psi = np.asarray(psi, dtype=float)
    constrained = np.asarray(constrained, dtype=np.int64)
    c = PDAS_CONSTANT_FACTOR * matrix.diagonal().max() if c is None else c

    seen = set()
    if x0 is None:
        previous = np.zeros(constrained.size, dtype=bool)
        x, multipliers = _solve_with_active_set(matrix, b, psi, constrained, previous, tol)
        iterations = 1
        seen.add(np.packbits(previous).tobytes())
    else:
        previous = None
        x = np.asarray(x0, dtype=float).copy()
        multipliers = np.zeros(constrained.size) if lambda0 is None else np.asarray(lambda0, dtype=float).copy()
        iterations = 0

    cycled = False
    while True:
        active = multipliers + c * (psi - x[constrained]) > 0.0
        if previous is not None and np.array_equal(active, previous):
            break
        key = np.packbits(active).tobytes()
        if key in seen:
            message = f'Active set cycle detected after {iterations} iterations; returning the last iterate.'
            logger.warning(message)
            warnings.warn(message, category=RuntimeWarning)
            cycled = True
            break
        if iterations >= max_iterations:
            raise SolverConvergenceError(f'Active set did not settle within {max_iterations} iterations.')

        seen.add(key)
        x, multipliers = _solve_with_active_set(matrix, b, psi, constrained, active, tol)
        previous = active
        iterations += 1
        logger.debug(f'PDAS iteration {iterations}: {np.count_nonzero(active)} active constraints')

    return DiscreteSolution(coefficients=x, multipliers=multipliers, constrained=constrained, active=previous,
                            iterations=iterations, cycled=cycled)


def complementarity_report(solution: DiscreteSolution, psi: np.ndarray) -> tuple[float, float, float]:
    """
        Returns:
            tuple[float, float, float]: Largest obstacle violation max(psi - u)^+, largest negative multiplier
            max(-lambda)^+, and |sum lambda (u - psi)|.
    """
    gap = solution.constrained_values() - psi
    infeasibility = float(np.maximum(-gap, 0.0).max(initial=0.0))
    negative = float(np.maximum(-solution.multipliers, 0.0).max(initial=0.0))
    complementarity = float(abs(np.dot(solution.multipliers, gap)))
    return infeasibility, negative, complementarity


def stationarity_residual(matrix: sparse.spmatrix, b: np.ndarray, solution: DiscreteSolution) -> float:
    """
        Relative residual ||A u - b - lambda|| / ||b|| of the KKT stationarity condition.
    """
    residual = matrix @ solution.coefficients - b
    residual[solution.constrained] -= solution.multipliers
    b_norm = np.linalg.norm(b)
    return float(np.linalg.norm(residual) / (b_norm if b_norm > 0.0 else 1.0))
