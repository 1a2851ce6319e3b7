import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from math import prod
from typing import Callable, Optional

import numpy as np

from src.plate_obstacle.discretization.dof_kind import DofKind
from src.plate_obstacle.discretization.mesh import LOCAL_EDGES, Mesh, PointLocator
from src.plate_obstacle.utils.exceptions import UnsupportedDegreeError

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (2, 3)
MAX_DERIVATIVE_ORDER = 3
VANDERMONDE_CONDITION_LIMIT = 1e10

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _falling_factorial(n: int, k: int) -> int:
    return prod(range(n - k + 1, n + 1)) if k <= n else 0


class LagrangeElement:
    """
        P_k Lagrange element on the reference triangle (0,0),(1,0),(0,1).

        Local nodes are ordered as the three vertices, then k-1 nodes per local edge in local edge order (each run
        from LOCAL_EDGES[j, 0] towards LOCAL_EDGES[j, 1]), then the barycenter for k = 3. The basis is expressed in
        monomials through the inverse Vandermonde matrix at those nodes.
    """

    def __init__(self, degree: int):
        if degree not in SUPPORTED_DEGREES:
            raise UnsupportedDegreeError(f'Lagrange degree {degree} is not supported; use one of {SUPPORTED_DEGREES}.')

        self.degree = degree
        self.exponents = [(total - b, b) for total in range(degree + 1) for b in range(total + 1)]
        self.nodes = self._reference_nodes()
        self.size = len(self.exponents)

        vandermonde = self._monomials(self.nodes, (0, 0))
        condition = np.linalg.cond(vandermonde)
        if condition > VANDERMONDE_CONDITION_LIMIT:
            raise UnsupportedDegreeError(f'Vandermonde matrix of degree {degree} is ill-conditioned ({condition:.3e}).')
        # basis function i is sum_j coefficients[j, i] * monomial_j
        self.coefficients = np.linalg.inv(vandermonde)

    def _reference_nodes(self) -> np.ndarray:
        k = self.degree
        nodes = [vertex for vertex in REFERENCE_VERTICES]
        for start, end in LOCAL_EDGES:
            for s in range(1, k):
                nodes.append(REFERENCE_VERTICES[start] + s / k * (REFERENCE_VERTICES[end] - REFERENCE_VERTICES[start]))
        if k == 3:
            nodes.append(REFERENCE_VERTICES.mean(axis=0))
        return np.array(nodes)

    def _monomials(self, points: np.ndarray, derivative: tuple[int, int]) -> np.ndarray:
        p, q = derivative
        x, y = points[..., 0], points[..., 1]
        columns = []
        for a, b in self.exponents:
            factor = _falling_factorial(a, p) * _falling_factorial(b, q)
            if factor == 0:
                columns.append(np.zeros_like(x))
            else:
                columns.append(factor * x ** (a - p) * y ** (b - q))
        return np.stack(columns, axis=-1)

    def _derivative(self, points: np.ndarray, order: int) -> np.ndarray:
        shape = points.shape[:-1] + (self.size,) + (2,) * order
        result = np.empty(shape)
        for index in itertools.product((0, 1), repeat=order):
            derivative = (index.count(0), index.count(1))
            result[(Ellipsis,) + index] = self._monomials(points, derivative) @ self.coefficients
        return result

    def tabulate(self, points: np.ndarray, max_deriv: int = 0) -> list[np.ndarray]:
        """
            Evaluates the reference basis and its derivatives.

            Args:
                points (np.ndarray): Reference points of shape (..., 2).
                max_deriv (int): Highest derivative order, 0..3.

            Raises:
                ValueError: If max_deriv is outside 0..3.

            Returns:
                list[np.ndarray]: Entry r has shape (..., n_basis) + (2,) * r.
        """
        if not 0 <= max_deriv <= MAX_DERIVATIVE_ORDER:
            raise ValueError(f'max_deriv must be in 0..{MAX_DERIVATIVE_ORDER}, got {max_deriv}.')
        points = np.asarray(points, dtype=float)
        return [self._derivative(points, order) for order in range(max_deriv + 1)]


@lru_cache(maxsize=None)
def lagrange_element(degree: int) -> LagrangeElement:
    return LagrangeElement(degree)


@dataclass
class BasisEval:
    """
        Basis functions of a batch of triangles at a batch of points, with physical derivatives.
        Arrays have shape (n_triangles, n_points, n_basis) followed by one axis of length 2 per derivative order;
        derivative arrays beyond the requested order are None.
    """
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None

    def order(self, r: int) -> np.ndarray:
        return (self.values, self.gradients, self.hessians, self.third)[r]


def eval_basis(mesh: Mesh,
               triangles: np.ndarray,
               element: LagrangeElement,
               reference_points: np.ndarray,
               max_deriv: int = 0) -> BasisEval:
    """
        Evaluates the basis of `element` on the given triangles. Reference points are shared (n_points, 2) or
        given per triangle (n_triangles, n_points, 2); derivatives are pushed forward with the constant inverse
        Jacobian of each affine element map.
    """
    triangles = np.asarray(triangles)
    tables = element.tabulate(reference_points, max_deriv)
    shared = np.asarray(reference_points).ndim == 2
    inverse = mesh.inverse_jacobians[triangles]
    n_triangles = triangles.shape[0]

    if shared:
        values = np.broadcast_to(tables[0], (n_triangles,) + tables[0].shape)
    else:
        values = tables[0]
    result = BasisEval(values=values)

    prefix = 'pn' if shared else 'tpn'
    if max_deriv >= 1:
        result.gradients = np.einsum(f'{prefix}a,tai->tpni', tables[1], inverse, optimize=True)
    if max_deriv >= 2:
        result.hessians = np.einsum(f'{prefix}ab,tai,tbj->tpnij', tables[2], inverse, inverse, optimize=True)
    if max_deriv >= 3:
        result.third = np.einsum(f'{prefix}abc,tai,tbj,tck->tpnijk', tables[3], inverse, inverse, inverse,
                                 optimize=True)
    return result


@dataclass(frozen=True)
class DofMap:
    """
        Global numbering of the P_k Lagrange nodes of a mesh.

        Vertex dofs carry the vertex id, edge dofs follow as n_vertices + (k-1)*edge + s ordered from the lower to
        the higher vertex id of the edge, and cell dofs come last. `constrained` lists the interior vertex dofs,
        the only dofs subject to the obstacle constraint.
    """
    degree: int
    element: LagrangeElement
    cell_dofs: np.ndarray
    kinds: np.ndarray
    owners: np.ndarray
    coordinates: np.ndarray
    boundary: np.ndarray
    constrained: np.ndarray

    @property
    def ndof(self) -> int:
        return self.kinds.shape[0]

    @property
    def boundary_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)


def build_dofmap(mesh: Mesh, degree: int) -> DofMap:
    """
        Numbers the Lagrange nodes of a mesh.

        Args:
            mesh (Mesh): The triangulation.
            degree (int): Polynomial degree k, 2 or 3.

        Raises:
            UnsupportedDegreeError: If the degree is not supported.

        Returns:
            DofMap: The numbering, with N = V + (k-1)E + (k-1)(k-2)/2 T dofs.
    """
    element = lagrange_element(degree)
    k = degree
    nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    per_edge = k - 1
    per_cell = (k - 1) * (k - 2) // 2
    ndof = nv + per_edge * ne + per_cell * nt

    cell_dofs = np.empty((nt, element.size), dtype=np.int64)
    cell_dofs[:, :3] = mesh.triangles
    for j, (start, end) in enumerate(LOCAL_EDGES):
        forward = mesh.triangles[:, start] < mesh.triangles[:, end]
        base = nv + per_edge * mesh.triangle_edges[:, j]
        for s in range(per_edge):
            cell_dofs[:, 3 + per_edge * j + s] = base + np.where(forward, s, per_edge - 1 - s)
    if per_cell:
        cell_dofs[:, 3 + 3 * per_edge] = nv + per_edge * ne + np.arange(nt)

    kinds = np.empty(ndof, dtype=np.int64)
    owners = np.empty(ndof, dtype=np.int64)
    coordinates = np.empty((ndof, 2))
    boundary = np.zeros(ndof, dtype=bool)

    kinds[:nv] = DofKind.VERTEX
    owners[:nv] = np.arange(nv)
    coordinates[:nv] = mesh.vertices
    boundary[:nv] = mesh.boundary_vertices

    low = mesh.vertices[mesh.edges[:, 0]]
    high = mesh.vertices[mesh.edges[:, 1]]
    for s in range(per_edge):
        dofs = nv + per_edge * np.arange(ne) + s
        kinds[dofs] = DofKind.EDGE
        owners[dofs] = np.arange(ne)
        coordinates[dofs] = low + (s + 1) / k * (high - low)
        boundary[dofs] = mesh.boundary_edges

    if per_cell:
        dofs = nv + per_edge * ne + np.arange(nt)
        kinds[dofs] = DofKind.CELL
        owners[dofs] = np.arange(nt)
        coordinates[dofs] = mesh.centroids

    constrained = np.flatnonzero(~mesh.boundary_vertices)
    return DofMap(degree=degree, element=element, cell_dofs=cell_dofs, kinds=kinds, owners=owners,
                  coordinates=coordinates, boundary=boundary, constrained=constrained)


def interpolate(g: Callable[[np.ndarray, np.ndarray], np.ndarray], dofmap: DofMap) -> np.ndarray:
    """
        Nodal interpolant of a function g(x, y) evaluated on coordinate arrays.
    """
    x, y = dofmap.coordinates[:, 0], dofmap.coordinates[:, 1]
    return np.array(np.broadcast_to(g(x, y), x.shape), dtype=float)


@dataclass
class PointValues:
    """
        A discrete function and its physical derivatives at a batch of points, with the same leading shape as the
        points and one trailing axis of length 2 per derivative order.
    """
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None


def evaluate_in(coefficients: np.ndarray,
                mesh: Mesh,
                dofmap: DofMap,
                triangles: np.ndarray,
                points: np.ndarray,
                max_deriv: int = 0) -> PointValues:
    """
        Evaluates a discrete function at physical points (n_triangles, n_points, 2) using the polynomial of the
        given triangles, which need not contain the points.
    """
    triangles = np.asarray(triangles)
    basis = eval_basis(mesh, triangles, dofmap.element, mesh.pull_back(triangles, points), max_deriv)
    local = coefficients[dofmap.cell_dofs[triangles]]
    result = PointValues(values=np.einsum('tpn,tn->tp', basis.values, local))
    if max_deriv >= 1:
        result.gradients = np.einsum('tpni,tn->tpi', basis.gradients, local)
    if max_deriv >= 2:
        result.hessians = np.einsum('tpnij,tn->tpij', basis.hessians, local)
    if max_deriv >= 3:
        result.third = np.einsum('tpnijk,tn->tpijk', basis.third, local)
    return result


def evaluate(coefficients: np.ndarray,
             mesh: Mesh,
             dofmap: DofMap,
             point: np.ndarray,
             max_deriv: int = 0,
             locator: Optional[PointLocator] = None) -> PointValues:
    """
        Evaluates a discrete function at a single physical point.

        Args:
            coefficients (np.ndarray): Global coefficient vector.
            mesh (Mesh): The mesh of the dof map.
            dofmap (DofMap): The dof numbering.
            point (np.ndarray): The physical point.
            max_deriv (int): Highest derivative order, 0..3.
            locator (Optional[PointLocator]): Caller-owned locator whose walk cache is reused between calls.

        Raises:
            PointLocationError: If the point lies outside the mesh.

        Returns:
            PointValues: Value and derivatives at the point.
    """
    locator = locator if locator is not None else PointLocator(mesh)
    point = np.asarray(point, dtype=float)
    triangle = locator.locate(point)
    result = evaluate_in(coefficients, mesh, dofmap, np.array([triangle]), point[None, None, :], max_deriv)
    return PointValues(*(None if array is None else array[0, 0] for array in
                         (result.values, result.gradients, result.hessians, result.third)))


def transfer(coefficients: np.ndarray,
             coarse_mesh: Mesh,
             coarse_dofmap: DofMap,
             fine_mesh: Mesh,
             fine_dofmap: DofMap,
             ancestors: np.ndarray) -> np.ndarray:
    """
        Interpolates a coarse discrete function onto a nested fine space. `ancestors` maps every fine triangle to
        the coarse triangle containing it, so no point location is needed.
    """
    owner = np.empty(fine_dofmap.ndof, dtype=np.int64)
    owner[fine_dofmap.cell_dofs.ravel()] = np.repeat(np.arange(fine_mesh.n_triangles), fine_dofmap.element.size)
    coarse_triangles = ancestors[owner]
    values = evaluate_in(coefficients, coarse_mesh, coarse_dofmap, coarse_triangles,
                         fine_dofmap.coordinates[:, None, :]).values
    return values[:, 0]
