import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from src.plate_obstacle.discretization.mesh import Mesh
from src.plate_obstacle.discretization.quadrature import (QuadRule, edge_rule, load_degree, stiffness_degree,
                                                          triangle_rule)
from src.plate_obstacle.discretization.space import DofMap, eval_basis, interpolate

logger = logging.getLogger(__name__)

CHUNK_SIZE = 2048


@dataclass
class EdgeOperators:
    """
        Jump of the normal derivative and average of the second normal derivative of every local basis function at
        edge quadrature points, shape (n_edges, n_points, n_local). For interior edges the local basis is the one of
        edge_triangles[e, 0] followed by the one of edge_triangles[e, 1]; boundary edges are one-sided.
    """
    jump: np.ndarray
    average: np.ndarray
    dofs: np.ndarray
    weights: np.ndarray
    points: np.ndarray


def _chunks(ids: np.ndarray, size: int = CHUNK_SIZE):
    for start in range(0, ids.size, size):
        yield ids[start:start + size]


def _scatter_matrix(dofs: np.ndarray, local: np.ndarray, ndof: int) -> sparse.csr_matrix:
    n = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], (dofs.shape[0], n, n))
    columns = np.broadcast_to(dofs[:, None, :], (dofs.shape[0], n, n))
    return sparse.coo_matrix((local.ravel(), (rows.ravel(), columns.ravel())), shape=(ndof, ndof)).tocsr()


def _scatter_vector(dofs: np.ndarray, local: np.ndarray, ndof: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=ndof)


def edge_operators(mesh: Mesh, dofmap: DofMap, edges: np.ndarray, rule: QuadRule) -> EdgeOperators:
    """
        Builds jump and average operators for a batch of edges that are either all interior or all on the boundary.
        On a boundary edge the jump is -dv/dn and the average is d2v/dn2, both one-sided with the outward normal.
    """
    edges = np.asarray(edges)
    points, weights = mesh.edge_points(edges, rule)
    normals = mesh.normals[edges]
    minus = mesh.edge_triangles[edges, 0]
    plus = mesh.edge_triangles[edges, 1]

    def normal_derivatives(triangles):
        basis = eval_basis(mesh, triangles, dofmap.element, mesh.pull_back(triangles, points), max_deriv=2)
        first = np.einsum('epni,ei->epn', basis.gradients, normals)
        second = np.einsum('epnij,ei,ej->epn', basis.hessians, normals, normals)
        return first, second

    first_minus, second_minus = normal_derivatives(minus)
    if np.all(plus < 0):
        return EdgeOperators(jump=-first_minus, average=second_minus, dofs=dofmap.cell_dofs[minus],
                             weights=weights, points=points)
    if np.any(plus < 0):
        raise ValueError('Edge batch mixes interior and boundary edges.')

    first_plus, second_plus = normal_derivatives(plus)
    return EdgeOperators(jump=np.concatenate([-first_minus, first_plus], axis=2),
                         average=0.5 * np.concatenate([second_minus, second_plus], axis=2),
                         dofs=np.concatenate([dofmap.cell_dofs[minus], dofmap.cell_dofs[plus]], axis=1),
                         weights=weights, points=points)


def _edge_part(mesh: Mesh, dofmap: DofMap, sigma: float, consistency: bool) -> sparse.csr_matrix:
    rule = edge_rule(stiffness_degree(dofmap.degree))
    matrix = sparse.csr_matrix((dofmap.ndof, dofmap.ndof))
    for group in (np.flatnonzero(~mesh.boundary_edges), np.flatnonzero(mesh.boundary_edges)):
        for edges in _chunks(group):
            operators = edge_operators(mesh, dofmap, edges, rule)
            penalty = sigma / mesh.edge_lengths[edges]
            local = penalty[:, None, None] * np.einsum('ep,epi,epj->eij', operators.weights, operators.jump,
                                                       operators.jump, optimize=True)
            if consistency:
                mixed = np.einsum('ep,epi,epj->eij', operators.weights, operators.average, operators.jump,
                                  optimize=True)
                local += mixed + mixed.transpose(0, 2, 1)
            matrix = matrix + _scatter_matrix(operators.dofs, local, dofmap.ndof)
    return matrix


def _hessian_part(mesh: Mesh, dofmap: DofMap) -> sparse.csr_matrix:
    rule = triangle_rule(stiffness_degree(dofmap.degree))
    matrix = sparse.csr_matrix((dofmap.ndof, dofmap.ndof))
    for triangles in _chunks(np.arange(mesh.n_triangles)):
        basis = eval_basis(mesh, triangles, dofmap.element, rule.points, max_deriv=2)
        weights = mesh.determinants[triangles][:, None] * rule.weights[None, :]
        local = np.einsum('tp,tpmij,tpnij->tmn', weights, basis.hessians, basis.hessians, optimize=True)
        matrix = matrix + _scatter_matrix(dofmap.cell_dofs[triangles], local, dofmap.ndof)
    return matrix


def assemble_stiffness(mesh: Mesh, dofmap: DofMap, sigma: float) -> sparse.csr_matrix:
    """
        Assembles the C0 interior penalty plate bilinear form

            a_h(w, v) = sum_T (D2 w, D2 v)_T + sum_e ({{d2w/dn2}}, [[dv/dn]])_e + ({{d2v/dn2}}, [[dw/dn]])_e
                        + sum_e sigma/|e| ([[dw/dn]], [[dv/dn]])_e

        over all edges, boundary edges included, so that the clamped condition dv/dn = 0 is imposed weakly.

        Args:
            mesh (Mesh): The triangulation.
            dofmap (DofMap): The P_k numbering on `mesh`.
            sigma (float): Penalty parameter.

        Returns:
            sparse.csr_matrix: The symmetric N x N stiffness matrix.
    """
    matrix = _hessian_part(mesh, dofmap) + _edge_part(mesh, dofmap, sigma, consistency=True)
    logger.debug(f'Assembled stiffness with {dofmap.ndof} dofs and {matrix.nnz} nonzeros')
    return matrix.tocsr()


def assemble_penalty(mesh: Mesh, dofmap: DofMap) -> sparse.csr_matrix:
    """
        The penalty term of a_h alone with sigma = 1.
    """
    return _edge_part(mesh, dofmap, 1.0, consistency=False).tocsr()


def assemble_load(f: Callable[[np.ndarray, np.ndarray], np.ndarray], mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    rule = triangle_rule(load_degree(dofmap.degree))
    table = dofmap.element.tabulate(rule.points)[0]
    load = np.zeros(dofmap.ndof)
    for triangles in _chunks(np.arange(mesh.n_triangles)):
        points = mesh.triangle_points(triangles, rule.points)
        values = np.broadcast_to(f(points[..., 0], points[..., 1]), points.shape[:-1])
        weights = mesh.determinants[triangles][:, None] * rule.weights[None, :]
        local = np.einsum('tp,tp,pn->tn', weights, values, table)
        load += _scatter_vector(dofmap.cell_dofs[triangles], local, dofmap.ndof)
    return load


def assemble_inhomogeneous(gradient: Callable[[np.ndarray, np.ndarray], np.ndarray],
                           mesh: Mesh,
                           dofmap: DofMap,
                           sigma: float) -> np.ndarray:
    """
        Boundary functional of nonhomogeneous clamped data,

            F_b(v) = sum_{e on boundary} ({{d2v/dn2}} + sigma/|e| [[dv/dn]], [[du/dn]])_e,

        with the one-sided boundary convention [[du/dn]] = -du/dn of the stiffness matrix.

        Args:
            gradient (Callable): Gradient of the exact solution, mapping (x, y) arrays to an array (..., 2).
            mesh (Mesh): The triangulation.
            dofmap (DofMap): The P_k numbering on `mesh`.
            sigma (float): Penalty parameter.

        Returns:
            np.ndarray: The length-N vector to add to the load.
    """
    rule = edge_rule(stiffness_degree(dofmap.degree) + 2)
    vector = np.zeros(dofmap.ndof)
    for edges in _chunks(np.flatnonzero(mesh.boundary_edges)):
        operators = edge_operators(mesh, dofmap, edges, rule)
        data_gradient = gradient(operators.points[..., 0], operators.points[..., 1])
        data_jump = -np.einsum('epi,ei->ep', data_gradient, mesh.normals[edges])
        penalty = sigma / mesh.edge_lengths[edges]
        test = operators.average + penalty[:, None, None] * operators.jump
        local = np.einsum('ep,ep,epn->en', operators.weights, data_jump, test)
        vector += _scatter_vector(operators.dofs, local, dofmap.ndof)
    return vector


@dataclass
class ReducedSystem:
    """
        Linear system on the free dofs after eliminating the boundary dofs.
    """
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    ndof: int

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        full = np.empty(self.ndof)
        full[self.free] = free_values
        full[self.fixed] = self.fixed_values
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return full[self.free]


def impose_boundary(matrix: sparse.csr_matrix,
                    rhs: np.ndarray,
                    dofmap: DofMap,
                    boundary_function: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
                    ) -> ReducedSystem:
    """
        Eliminates the boundary dofs symmetrically, fixing them to zero or to the nodal values of
        `boundary_function`, and moves the fixed columns to the right-hand side.
    """
    fixed = dofmap.boundary_dofs
    free = dofmap.interior_dofs
    if boundary_function is None:
        fixed_values = np.zeros(fixed.size)
    else:
        fixed_values = interpolate(boundary_function, dofmap)[fixed]

    matrix = sparse.csr_matrix(matrix)
    rows = matrix[free]
    reduced = rows[:, free].tocsr()
    reduced_rhs = rhs[free] - rows[:, fixed] @ fixed_values
    return ReducedSystem(matrix=reduced, rhs=reduced_rhs, free=free, fixed=fixed, fixed_values=fixed_values,
                         ndof=dofmap.ndof)
