import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.plate_obstacle.discretization.domain_type import BoundaryMode, DomainType
from src.plate_obstacle.utils.exceptions import ProblemDefinitionError, UnsupportedDegreeError

PointFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_SIGMA = {2: 6.0, 3: 18.0}

# Radially symmetric solution on the square: contact disc of radius R0, biharmonic outside.
R0 = 0.18134453
C1 = 0.52504063
C2 = -0.62860905
C3 = 0.017266401
C4 = 1.0467463


@dataclass(frozen=True)
class ExactSolution:
    """
        Closed-form solution; `gradient` returns shape (..., 2) and `hessian` shape (..., 2, 2).
    """
    value: PointFunction
    gradient: PointFunction
    hessian: PointFunction


@dataclass(frozen=True)
class ProblemSpec:
    """
        A benchmark problem. `load_interfaces` lists the axes i whose lines x_i = 0 the load jumps across.
    """
    name: str
    domain: DomainType
    load: PointFunction
    obstacle: PointFunction
    boundary_mode: BoundaryMode
    exact: Optional[ExactSolution] = None
    multiplier_mass: Optional[float] = None
    load_interfaces: tuple[int, ...] = ()

    def default_sigma(self, degree: int) -> float:
        if degree not in DEFAULT_SIGMA:
            raise UnsupportedDegreeError(f'No default penalty for degree {degree}.')
        return DEFAULT_SIGMA[degree]

    def boundary_function(self) -> Optional[PointFunction]:
        """
            The function whose nodal values are imposed on boundary dofs, or None for homogeneous data.
        """
        if self.boundary_mode is BoundaryMode.INTERPOLATED:
            if self.exact is None:
                raise ProblemDefinitionError(
                    f'Problem {self.name} interpolates boundary data but has no exact solution.')
            return self.exact.value
        return None


def _radial_parts(x, y):
    r = np.hypot(x, y)
    outer = r > R0
    r_safe = np.where(outer, r, 1.0)
    log_r = np.log(r_safe)
    g = C1 * r_safe ** 2 * log_r + C2 * r_safe ** 2 + C3 * log_r + C4
    dg = C1 * (2.0 * r_safe * log_r + r_safe) + 2.0 * C2 * r_safe + C3 / r_safe
    d2g = C1 * (2.0 * log_r + 3.0) + 2.0 * C2 - C3 / r_safe ** 2
    return outer, r_safe, g, dg, d2g


def _example1_value(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    outer, _, g, _, _ = _radial_parts(x, y)
    return np.where(outer, g, 1.0 - x ** 2 - y ** 2)


def _example1_gradient(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    outer, r, _, dg, _ = _radial_parts(x, y)
    scale = np.where(outer, dg / r, -2.0)
    return np.stack([scale * x, scale * y], axis=-1)


def _example1_hessian(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    outer, r, _, dg, d2g = _radial_parts(x, y)
    direction = np.stack([x / r, y / r], axis=-1)
    radial = direction[..., :, None] * direction[..., None, :]
    identity = np.eye(2)
    outer_hessian = d2g[..., None, None] * radial + (dg / r)[..., None, None] * (identity - radial)
    return np.where(outer[..., None, None], outer_hessian, -2.0 * identity)


def _zero(x, y):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))


def _paraboloid(x, y):
    return 1.0 - np.asarray(x) ** 2 - np.asarray(y) ** 2


def example1() -> ProblemSpec:
    """
        Square plate with a paraboloid obstacle, f = 0 and the radial closed-form solution imposed as boundary data.
        The multiplier is the uniform measure on the circle |x| = R0 with total mass 8 pi C1.
    """
    exact = ExactSolution(value=_example1_value, gradient=_example1_gradient, hessian=_example1_hessian)
    return ProblemSpec(name='example1', domain=DomainType.SQUARE, load=_zero, obstacle=_paraboloid,
                       boundary_mode=BoundaryMode.INTERPOLATED, exact=exact, multiplier_mass=8.0 * math.pi * C1)


def _elliptic_obstacle(x, y):
    x, y = np.asarray(x), np.asarray(y)
    return 1.0 - ((x + 0.25) ** 2 / 0.2 ** 2 + y ** 2 / 0.35 ** 2)


def example2() -> ProblemSpec:
    return ProblemSpec(name='example2', domain=DomainType.LSHAPE, load=_zero, obstacle=_elliptic_obstacle,
                       boundary_mode=BoundaryMode.HOMOGENEOUS)


def _oscillating_obstacle(x, y):
    x, y = np.asarray(x), np.asarray(y)
    return -(np.sin(2.0 * np.pi * (x + 0.5) * (y + 0.5)) * np.sin(4.0 * np.pi * (x - 0.5) * (y - 0.5))) - 0.35


def _piecewise_load(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.any((x > 0.0) & (y > 0.0)):
        raise ProblemDefinitionError('Load of example3 evaluated in the removed quadrant x1 > 0, x2 > 0.')
    upper_left = 1e3 * (0.5 * np.exp((x + 0.25) ** 2 + (y + 0.25) ** 2))
    lower_right = 1e3 * (0.5 + ((x - 0.25) ** 2 + (y + 0.25) ** 2) ** 1.5)
    return np.where((x <= 0.0) & (y > 0.0), upper_left, np.where((x >= 0.0) & (y <= 0.0), lower_right, 0.0))


def example3() -> ProblemSpec:
    """
        L-shaped plate with an oscillating obstacle and a load that is smooth on each quadrant: an exponential bump
        on the upper-left quadrant, zero on the lower-left one and an algebraic profile on the lower-right one.
    """
    return ProblemSpec(name='example3', domain=DomainType.LSHAPE, load=_piecewise_load, obstacle=_oscillating_obstacle,
                       boundary_mode=BoundaryMode.HOMOGENEOUS, load_interfaces=(0, 1))


PROBLEMS = {
    'example1': example1,
    'example2': example2,
    'example3': example3,
}


def get_problem(name: str) -> ProblemSpec:
    if name not in PROBLEMS:
        raise ProblemDefinitionError(f'Unknown problem {name!r}; choose one of {sorted(PROBLEMS)}.')
    return PROBLEMS[name]()
