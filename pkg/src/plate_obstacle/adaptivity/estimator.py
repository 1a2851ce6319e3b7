import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from src.plate_obstacle.data.problems import ExactSolution, PointFunction
from src.plate_obstacle.discretization.mesh import Mesh
from src.plate_obstacle.discretization.quadrature import edge_rule, estimator_degree, triangle_rule
from src.plate_obstacle.discretization.space import DofMap, evaluate_in, eval_basis
from src.plate_obstacle.solvers.vi_solver import DiscreteSolution
from src.plate_obstacle.utils.exceptions import NonNestedMeshError, UnsupportedDegreeError

logger = logging.getLogger(__name__)

CHUNK_SIZE = 2048
DEFAULT_RELIABILITY_CONSTANT = 0.32

# Barycentric coordinates (times 5) of the interior points of the fifth-order lattice.
INTERIOR_LATTICE = np.array([[1, 1, 3], [1, 3, 1], [3, 1, 1], [1, 2, 2], [2, 1, 2], [2, 2, 1]]) / 5.0


@dataclass
class EdgeJumps:
    """
        Squared L2(e) norms of the jumps of the first, second and third normal derivatives of a discrete function on
        every edge. Second and third jumps are zero on boundary edges.
    """
    first: np.ndarray
    second: np.ndarray
    third: np.ndarray


def _chunks(ids, size=CHUNK_SIZE):
    for start in range(0, ids.size, size):
        yield ids[start:start + size]


def _normal_derivatives(values, normals):
    first = np.einsum('epi,ei->ep', values.gradients, normals)
    second = np.einsum('epij,ei,ej->ep', values.hessians, normals, normals)
    third = (np.einsum('epijk,ei,ej,ek->ep', values.third, normals, normals, normals)
             if values.third is not None else np.zeros_like(first))
    return first, second, third


def edge_jumps(mesh: Mesh,
               dofmap: DofMap,
               coefficients: np.ndarray,
               exact: Optional[ExactSolution] = None) -> EdgeJumps:
    """
        Computes normal-derivative jumps of a discrete function u_h with jumps taken as (plus - minus) . n.

        On a boundary edge the first jump is -du_h/dn, or -d(u_h - u)/dn when the exact solution u is given.
    """
    rule = edge_rule(estimator_degree(dofmap.degree))
    max_deriv = 3 if dofmap.degree >= 3 else 2
    first = np.zeros(mesh.n_edges)
    second = np.zeros(mesh.n_edges)
    third = np.zeros(mesh.n_edges)

    interior = np.flatnonzero(~mesh.boundary_edges)
    for edges in _chunks(interior):
        points, weights = mesh.edge_points(edges, rule)
        normals = mesh.normals[edges]
        minus = _normal_derivatives(evaluate_in(coefficients, mesh, dofmap, mesh.edge_triangles[edges, 0], points,
                                                max_deriv), normals)
        plus = _normal_derivatives(evaluate_in(coefficients, mesh, dofmap, mesh.edge_triangles[edges, 1], points,
                                               max_deriv), normals)
        for target, jump in zip((first, second, third), (p - m for p, m in zip(plus, minus))):
            target[edges] = np.einsum('ep,ep->e', weights, jump ** 2)

    boundary = np.flatnonzero(mesh.boundary_edges)
    for edges in _chunks(boundary):
        points, weights = mesh.edge_points(edges, rule)
        normals = mesh.normals[edges]
        gradients = evaluate_in(coefficients, mesh, dofmap, mesh.edge_triangles[edges, 0], points, 1).gradients
        if exact is not None:
            gradients = gradients - exact.gradient(points[..., 0], points[..., 1])
        jump = -np.einsum('epi,ei->ep', gradients, normals)
        first[edges] = np.einsum('ep,ep->e', weights, jump ** 2)

    return EdgeJumps(first=first, second=second, third=third)


@dataclass
class EstimatorReport:
    """
        Residual estimator terms. Edge terms are indexed by edge id, element terms by triangle id; all entries are
        the unsquared indicators.
    """
    eta_e1: np.ndarray
    eta_e2: np.ndarray
    eta_e3: np.ndarray
    eta_t: np.ndarray
    oscillation: np.ndarray
    jump_norms: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sqrt(self.total_squared))

    @property
    def total_squared(self) -> float:
        return float((self.eta_e1 ** 2).sum() + (self.eta_e2 ** 2).sum() + (self.eta_e3 ** 2).sum()
                     + (self.eta_t ** 2).sum())

    @property
    def oscillation_total(self) -> float:
        return float(np.sqrt((self.oscillation ** 2).sum()))

    def edge_indicators(self) -> np.ndarray:
        """
            Squared indicator eta_e1^2 + eta_e2^2 + eta_e3^2 of every edge.
        """
        return self.eta_e1 ** 2 + self.eta_e2 ** 2 + self.eta_e3 ** 2

    def triangle_indicators(self) -> np.ndarray:
        return self.eta_t ** 2

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for entity_type, term, values in (('edge', 'eta_e1', self.eta_e1), ('edge', 'eta_e2', self.eta_e2),
                                          ('edge', 'eta_e3', self.eta_e3), ('triangle', 'eta_t', self.eta_t),
                                          ('triangle', 'osc', self.oscillation)):
            frames.append(pd.DataFrame({'entity_type': entity_type, 'entity_id': np.arange(values.size),
                                        'term': term, 'value': values}))
        return pd.concat(frames, ignore_index=True)


def _load_quadrature(f: PointFunction, mesh: Mesh, degree: int):
    rule = triangle_rule(estimator_degree(degree))
    for triangles in _chunks(np.arange(mesh.n_triangles)):
        points = mesh.triangle_points(triangles, rule.points)
        values = np.broadcast_to(f(points[..., 0], points[..., 1]), points.shape[:-1])
        weights = mesh.determinants[triangles][:, None] * rule.weights[None, :]
        yield triangles, weights, values


def _load_norms(f: PointFunction, mesh: Mesh, degree: int) -> np.ndarray:
    norms = np.empty(mesh.n_triangles)
    for triangles, weights, values in _load_quadrature(f, mesh, degree):
        norms[triangles] = np.sqrt(np.einsum('tp,tp->t', weights, values ** 2))
    return norms


def oscillation(f: PointFunction, mesh: Mesh, degree: int) -> tuple[np.ndarray, float]:
    """
        Data oscillation h_T^2 ||f - mean_T f||_{L2(T)} of every triangle and its root-sum-square.
    """
    deviations = np.empty(mesh.n_triangles)
    for triangles, weights, values in _load_quadrature(f, mesh, degree):
        mean = np.einsum('tp,tp->t', weights, values) / mesh.areas[triangles]
        deviations[triangles] = np.sqrt(np.einsum('tp,tp->t', weights, (values - mean[:, None]) ** 2))
    local = mesh.diameters ** 2 * deviations
    return local, float(np.sqrt((local ** 2).sum()))


def estimate(mesh: Mesh,
             dofmap: DofMap,
             solution: DiscreteSolution,
             f: PointFunction,
             sigma: float,
             exact: Optional[ExactSolution] = None) -> EstimatorReport:
    """
        Computes the residual estimator of a discrete solution.

        The terms are sigma |e|^{-1/2} ||[[du_h/dn]]|| on every edge, |e|^{1/2} ||[[d2u_h/dn2]]|| and
        |e|^{3/2} ||[[d3u_h/dn3]]|| on interior edges, and h_T^2 ||f||_{L2(T)} on triangles since the biharmonic
        of a polynomial of degree at most 3 vanishes.

        Args:
            mesh (Mesh): The triangulation.
            dofmap (DofMap): The numbering of `solution`.
            solution (DiscreteSolution): Solution with full coefficient vector.
            f (PointFunction): Load.
            sigma (float): Penalty parameter.
            exact (Optional[ExactSolution]): Boundary data; when given, the boundary jump measures the mismatch
                of normal derivatives against it.

        Raises:
            UnsupportedDegreeError: If the degree exceeds 3.

        Returns:
            EstimatorReport: All indicators.
    """
    if dofmap.degree > 3:
        raise UnsupportedDegreeError('The element residual assumes a vanishing biharmonic of u_h, valid up to k = 3.')

    jumps = edge_jumps(mesh, dofmap, solution.coefficients, exact)
    lengths = mesh.edge_lengths
    h_squared = mesh.diameters ** 2
    local_oscillation, _ = oscillation(f, mesh, dofmap.degree)

    report = EstimatorReport(eta_e1=sigma * np.sqrt(jumps.first / lengths),
                             eta_e2=np.sqrt(lengths * jumps.second),
                             eta_e3=np.sqrt(lengths ** 3 * jumps.third),
                             eta_t=h_squared * _load_norms(f, mesh, dofmap.degree),
                             oscillation=local_oscillation,
                             jump_norms=np.sqrt(jumps.first))
    logger.debug(f'Estimator {report.total:.6e} on {mesh.n_triangles} triangles')
    return report


def q1(mesh: Mesh,
       dofmap: DofMap,
       solution: DiscreteSolution,
       exact: Optional[ExactSolution] = None,
       report: Optional[EstimatorReport] = None) -> float:
    """
        Computes sqrt(max_T h_T sum_{e in star(T)} |e|^{-1/2} ||[[du_h/dn]]||_{L2(e)}), where star(T) holds the
        edges touching a vertex of T. Jump norms are taken from `report` when available.
    """
    jump_norms = report.jump_norms if report is not None else np.sqrt(
        edge_jumps(mesh, dofmap, solution.coefficients, exact).first)
    per_edge = jump_norms / np.sqrt(mesh.edge_lengths)
    per_triangle = mesh.diameters * (mesh.edge_star_matrix() @ per_edge)
    return float(np.sqrt(per_triangle.max()))


def q2(mesh: Mesh, dofmap: DofMap, solution: DiscreteSolution, obstacle: PointFunction) -> float:
    """
        Square root of the largest obstacle violation (psi - u_h)^+ sampled at the Lagrange nodes and at six interior
        points of every triangle.
    """
    coordinates = dofmap.coordinates
    violation = obstacle(coordinates[:, 0], coordinates[:, 1]) - solution.coefficients
    largest = float(np.max(violation, initial=0.0))

    lattice = INTERIOR_LATTICE[:, 1:]
    table = dofmap.element.tabulate(lattice)[0]
    for triangles in _chunks(np.arange(mesh.n_triangles)):
        values = solution.coefficients[dofmap.cell_dofs[triangles]] @ table.T
        points = mesh.triangle_points(triangles, lattice)
        violation = obstacle(points[..., 0], points[..., 1]) - values
        largest = max(largest, float(violation.max(initial=0.0)))
    return float(np.sqrt(max(largest, 0.0)))


def lambda_mass(solution: DiscreteSolution) -> float:
    """
        Total discrete multiplier mass, the sum of the nodal multipliers over the constrained vertices.
    """
    return solution.lambda_mass


def lambda_gap(previous: float, current: float) -> float:
    return abs(previous - current)


def reliability_bound(eta: float,
                      q1_value: float,
                      q2_value: float,
                      multiplier_mass: float,
                      constant: float = DEFAULT_RELIABILITY_CONSTANT) -> float:
    """
        Computable bound Q_h = C (eta_h + |lambda|^{1/2} Q_1) + |lambda|^{1/2} Q_2 on the error in the mesh norm.
    """
    root = np.sqrt(abs(multiplier_mass))
    return float(constant * (eta + root * q1_value) + root * q2_value)


def effectivity(eta: float, error: Optional[float]) -> Optional[float]:
    if error is None or error == 0.0:
        return None
    return eta / error


@dataclass
class ReferenceSolution:
    """
        Discrete solution on a mesh nested in the one being measured, with `ancestors` mapping each of its triangles
        to the containing coarse triangle.
    """
    mesh: Mesh
    dofmap: DofMap
    coefficients: np.ndarray
    ancestors: np.ndarray


def _broken_hessian_exact(mesh, dofmap, coefficients, exact):
    rule = triangle_rule(estimator_degree(dofmap.degree))
    total = 0.0
    for triangles in _chunks(np.arange(mesh.n_triangles)):
        basis = eval_basis(mesh, triangles, dofmap.element, rule.points, max_deriv=2)
        hessians = np.einsum('tpnij,tn->tpij', basis.hessians, coefficients[dofmap.cell_dofs[triangles]])
        points = mesh.triangle_points(triangles, rule.points)
        difference = exact.hessian(points[..., 0], points[..., 1]) - hessians
        weights = mesh.determinants[triangles][:, None] * rule.weights[None, :]
        total += float(np.einsum('tp,tpij,tpij->', weights, difference, difference))
    return total


def _broken_hessian_reference(mesh, dofmap, coefficients, reference):
    fine = reference.mesh
    rule = triangle_rule(estimator_degree(dofmap.degree))
    total = 0.0
    for triangles in _chunks(np.arange(fine.n_triangles)):
        points = fine.triangle_points(triangles, rule.points)
        fine_values = evaluate_in(reference.coefficients, fine, reference.dofmap, triangles, points, 2)
        coarse_values = evaluate_in(coefficients, mesh, dofmap, reference.ancestors[triangles], points, 2)
        difference = fine_values.hessians - coarse_values.hessians
        weights = fine.determinants[triangles][:, None] * rule.weights[None, :]
        total += float(np.einsum('tp,tpij,tpij->', weights, difference, difference))
    return total


def _jump_term_reference(mesh, dofmap, coefficients, reference, sigma):
    """
        sum over coarse edges of sigma/|e| ||[[d(u_ref - u_h)/dn]]||^2, integrated over the fine edges that lie on
        coarse edges.
    """
    fine = reference.mesh
    ancestors = reference.ancestors
    minus = fine.edge_triangles[:, 0]
    plus = fine.edge_triangles[:, 1]
    boundary = fine.boundary_edges
    on_coarse = boundary.copy()
    on_coarse[~boundary] = ancestors[minus[~boundary]] != ancestors[plus[~boundary]]
    edges = np.flatnonzero(on_coarse)

    coarse_minus = ancestors[minus[edges]]
    midpoints = fine.edge_midpoints[edges]
    reference_midpoints = mesh.pull_back(coarse_minus, midpoints[:, None, :])[:, 0, :]
    barycentric = np.column_stack([1.0 - reference_midpoints.sum(axis=1), reference_midpoints])
    local_edge = np.argmin(np.abs(barycentric), axis=1)
    coarse_lengths = mesh.edge_lengths[mesh.triangle_edges[coarse_minus, local_edge]]

    rule = edge_rule(estimator_degree(dofmap.degree))
    total = 0.0
    for start in range(0, edges.size, CHUNK_SIZE):
        chunk = edges[start:start + CHUNK_SIZE]
        chunk_lengths = coarse_lengths[start:start + CHUNK_SIZE]
        points, weights = fine.edge_points(chunk, rule)
        normals = fine.normals[chunk]
        interior = ~boundary[chunk]

        def normal_jump(values_minus, values_plus):
            jump = -np.einsum('epi,ei->ep', values_minus, normals)
            if interior.any():
                jump[interior] += np.einsum('epi,ei->ep', values_plus, normals[interior])
            return jump

        fine_minus = evaluate_in(reference.coefficients, fine, reference.dofmap, minus[chunk], points, 1).gradients
        coarse_minus_gradients = evaluate_in(coefficients, mesh, dofmap, ancestors[minus[chunk]], points, 1).gradients
        fine_plus = coarse_plus = None
        if interior.any():
            fine_plus = evaluate_in(reference.coefficients, fine, reference.dofmap, plus[chunk][interior],
                                    points[interior], 1).gradients
            coarse_plus = evaluate_in(coefficients, mesh, dofmap, ancestors[plus[chunk][interior]],
                                      points[interior], 1).gradients

        difference = normal_jump(fine_minus, fine_plus) - normal_jump(coarse_minus_gradients, coarse_plus)
        total += float(np.sum(sigma / chunk_lengths * np.einsum('ep,ep->e', weights, difference ** 2)))
    return total


def error_norm(mesh: Mesh,
               dofmap: DofMap,
               coefficients: np.ndarray,
               sigma: float,
               exact: Optional[ExactSolution] = None,
               reference: Optional[ReferenceSolution] = None) -> float:
    """
        Mesh-dependent error norm ||u - u_h||_h, the broken H2 seminorm plus sum_e sigma/|e| ||[[d(u - u_h)/dn]]||^2
        over the edges of `mesh`.

        With an exact solution the Hessian of u enters in closed form and the boundary jump measures the data
        mismatch. With a reference solution the difference is integrated on the nested fine mesh.

        Raises:
            NonNestedMeshError: If neither truth is given, or the reference does not refine `mesh`.
    """
    if exact is not None:
        jumps = edge_jumps(mesh, dofmap, coefficients, exact)
        squared = (_broken_hessian_exact(mesh, dofmap, coefficients, exact)
                   + float(np.sum(sigma / mesh.edge_lengths * jumps.first)))
        return float(np.sqrt(squared))

    if reference is None:
        raise NonNestedMeshError('An error norm needs either an exact solution or a reference solution.')
    if (reference.ancestors.shape[0] != reference.mesh.n_triangles or reference.ancestors.size == 0
            or reference.ancestors.max() >= mesh.n_triangles or reference.ancestors.min() < 0):
        raise NonNestedMeshError('Reference ancestors do not map the reference mesh onto the measured mesh.')

    squared = (_broken_hessian_reference(mesh, dofmap, coefficients, reference)
               + _jump_term_reference(mesh, dofmap, coefficients, reference, sigma))
    return float(np.sqrt(squared))
