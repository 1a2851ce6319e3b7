import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from src.plate_obstacle.utils.exceptions import QuadratureError

MAX_TRIANGLE_DEGREE = 12

REFERENCE_TRIANGLE_AREA = 0.5


@dataclass(frozen=True)
class QuadRule:
    """
        Quadrature rule on a reference entity: the triangle (0,0),(1,0),(0,1) with measure 1/2,
        or the unit interval [0,1] with measure 1.
    """
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def _radon_seven_point() -> tuple[np.ndarray, np.ndarray]:
    root = math.sqrt(15.0)
    a = (6.0 - root) / 21.0
    b = (6.0 + root) / 21.0
    weight_a = (155.0 - root) / 2400.0
    weight_b = (155.0 + root) / 2400.0
    points = np.array([
        [1.0 / 3.0, 1.0 / 3.0],
        [a, a], [1.0 - 2.0 * a, a], [a, 1.0 - 2.0 * a],
        [b, b], [1.0 - 2.0 * b, b], [b, 1.0 - 2.0 * b],
    ])
    weights = np.array([9.0 / 80.0, weight_a, weight_a, weight_a, weight_b, weight_b, weight_b])
    return points, weights


def _collapsed_gauss(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Duffy collapse x = u, y = (1 - u) v; the (1 - u) Jacobian is absorbed by the Gauss-Jacobi weight.
    n = math.ceil((degree + 1) / 2)
    jacobi_nodes, jacobi_weights = roots_jacobi(n, 1.0, 0.0)
    legendre_nodes, legendre_weights = leggauss(n)
    u = (1.0 + jacobi_nodes) / 2.0
    v = (1.0 + legendre_nodes) / 2.0
    uu, vv = np.meshgrid(u, v, indexing='ij')
    points = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    weights = np.outer(jacobi_weights / 4.0, legendre_weights / 2.0).ravel()
    return points, weights


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """
        Returns a rule on the reference triangle that integrates all bivariate polynomials of total degree
        at most `degree` exactly.

        Args:
            degree (int): Requested exactness degree, 0 <= degree <= MAX_TRIANGLE_DEGREE.

        Raises:
            QuadratureError: If the degree is negative or beyond the supported range.

        Returns:
            QuadRule: The rule, points in reference coordinates and weights summing to 1/2.
    """
    if degree < 0 or degree > MAX_TRIANGLE_DEGREE:
        raise QuadratureError(f'No triangle rule of degree {degree}; supported degrees are 0..{MAX_TRIANGLE_DEGREE}.')

    if degree <= 1:
        points, weights = np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    elif degree == 2:
        points = np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]])
        weights = np.full(3, 1.0 / 6.0)
    elif degree <= 5:
        points, weights = _radon_seven_point()
    else:
        points, weights = _collapsed_gauss(degree)

    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(points=points, weights=weights, degree=degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    """
        Gauss-Legendre rule on [0, 1], exact for polynomials of degree at most `degree`.
        Points are returned as a one-dimensional array of edge parameters.
    """
    if degree < 0:
        raise QuadratureError(f'No edge rule of negative degree {degree}.')

    n = max(1, math.ceil((degree + 1) / 2))
    nodes, weights = leggauss(n)
    points = (1.0 + nodes) / 2.0
    weights = weights / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(points=points, weights=weights, degree=degree)


def stiffness_degree(k: int) -> int:
    return 2 * k


def load_degree(k: int) -> int:
    return 2 * k + 2


def estimator_degree(k: int) -> int:
    return max(2 * k, 6)
