import unittest

import numpy as np

from src.plate_obstacle.data.problems import example1, example3
from src.plate_obstacle.discretization.assembly import (assemble_inhomogeneous, assemble_load, assemble_penalty,
                                                        assemble_stiffness, edge_operators, impose_boundary)
from src.plate_obstacle.discretization.domain_type import DomainType
from src.plate_obstacle.discretization.mesh import Mesh, build_initial, refine, uniform_refine
from src.plate_obstacle.discretization.quadrature import edge_rule, triangle_rule
from src.plate_obstacle.discretization.space import build_dofmap, interpolate
from src.plate_obstacle.solvers.linsolve import SpdFactorization


def quadratic_basis(mesh: Mesh, triangle: int, dof: int):
    """
        Gradient and Hessian callables of the global P2 basis function `dof` restricted to `triangle`, written with
        barycentric coordinates.
    """
    corners = mesh.vertices[mesh.triangles[triangle]]
    inverse = np.linalg.inv(np.vstack([np.ones(3), corners.T]))
    local = list(mesh.triangles[triangle])

    def coordinate(i, point):
        return inverse[i, 0] + inverse[i, 1:] @ point

    if dof < mesh.n_vertices:
        if dof not in local:
            return lambda point: np.zeros(2), np.zeros((2, 2))
        i = local.index(dof)
        g = inverse[i, 1:]
        return lambda point: (4.0 * coordinate(i, point) - 1.0) * g, 4.0 * np.outer(g, g)

    v, w = mesh.edges[dof - mesh.n_vertices]
    if v not in local or w not in local:
        return lambda point: np.zeros(2), np.zeros((2, 2))
    i, j = local.index(v), local.index(w)
    gi, gj = inverse[i, 1:], inverse[j, 1:]
    return (lambda point: 4.0 * (coordinate(j, point) * gi + coordinate(i, point) * gj),
            4.0 * (np.outer(gi, gj) + np.outer(gj, gi)))


def two_triangle_form(mesh: Mesh, sigma: float, first: int, second: int) -> float:
    total = 0.0
    for t in range(mesh.n_triangles):
        _, hessian_first = quadratic_basis(mesh, t, first)
        _, hessian_second = quadratic_basis(mesh, t, second)
        total += mesh.areas[t] * np.sum(hessian_first * hessian_second)

    nodes, weights = np.polynomial.legendre.leggauss(3)
    nodes, weights = (nodes + 1.0) / 2.0, weights / 2.0
    for e, (v, w) in enumerate(mesh.edges):
        start, end = mesh.vertices[v], mesh.vertices[w]
        length = np.linalg.norm(end - start)
        normal = np.array([end[1] - start[1], start[0] - end[0]]) / length
        minus, plus = mesh.edge_triangles[e]
        if np.dot(normal, (start + end) / 2.0 - mesh.centroids[minus]) < 0.0:
            normal = -normal

        def traces(dof, point):
            gradient_minus, hessian_minus = quadratic_basis(mesh, minus, dof)
            if plus < 0:
                return -gradient_minus(point) @ normal, normal @ hessian_minus @ normal
            gradient_plus, hessian_plus = quadratic_basis(mesh, plus, dof)
            jump = (gradient_plus(point) - gradient_minus(point)) @ normal
            average = 0.5 * (normal @ hessian_minus @ normal + normal @ hessian_plus @ normal)
            return jump, average

        for s, weight in zip(nodes, weights):
            point = start + s * (end - start)
            jump_first, average_first = traces(first, point)
            jump_second, average_second = traces(second, point)
            total += weight * length * (average_first * jump_second + average_second * jump_first
                                        + sigma / length * jump_first * jump_second)
    return total


class StiffnessTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.mesh = refine(build_initial(DomainType.LSHAPE), marked_triangles=[0, 11, 23])
        cls.dofmaps = {k: build_dofmap(cls.mesh, k) for k in (2, 3)}
        cls.matrices = {k: assemble_stiffness(cls.mesh, cls.dofmaps[k], sigma)
                        for k, sigma in ((2, 6.0), (3, 18.0))}

    def test_should_be_symmetric(self):
        for matrix in self.matrices.values():
            scale = abs(matrix).max()
            self.assertLessEqual(abs(matrix - matrix.T).max(), 1e-12 * scale)

    def test_should_annihilate_constants(self):
        for k, matrix in self.matrices.items():
            scale = abs(matrix).max()
            self.assertLessEqual(np.abs(matrix @ np.ones(self.dofmaps[k].ndof)).max(), 1e-10 * scale)

    def test_should_be_affine_in_sigma(self):
        dofmap = self.dofmaps[2]
        difference = assemble_stiffness(self.mesh, dofmap, 6.0) - assemble_stiffness(self.mesh, dofmap, 18.0)
        penalty = assemble_penalty(self.mesh, dofmap)
        scale = abs(self.matrices[2]).max()
        self.assertLessEqual(abs(difference + 12.0 * penalty).max(), 1e-10 * scale)

    def test_should_be_positive_definite_after_elimination(self):
        for k in (2, 3):
            dofmap = self.dofmaps[k]
            system = impose_boundary(self.matrices[k], np.zeros(dofmap.ndof), dofmap)
            SpdFactorization(system.matrix)

    def test_should_not_depend_on_triangle_order(self):
        mesh = self.mesh
        reordered = Mesh(mesh.vertices, mesh.triangles[::-1], domain=mesh.domain)
        matrix = assemble_stiffness(reordered, build_dofmap(reordered, 2), 6.0)
        scale = abs(self.matrices[2]).max()
        self.assertLessEqual(abs(matrix - self.matrices[2]).max(), 1e-12 * scale)

    def test_should_match_two_triangle_oracle(self):
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        mesh = Mesh(vertices, np.array([[2, 0, 1], [0, 2, 3]]))
        dofmap = build_dofmap(mesh, 2)
        matrix = assemble_stiffness(mesh, dofmap, 6.0).toarray()
        for first in range(dofmap.ndof):
            for second in range(dofmap.ndof):
                self.assertAlmostEqual(matrix[first, second], two_triangle_form(mesh, 6.0, first, second),
                                       delta=1e-12 * np.abs(matrix).max())

    def test_should_reject_mixed_edge_batches(self):
        mesh = self.mesh
        edges = np.array([np.flatnonzero(mesh.boundary_edges)[0], np.flatnonzero(~mesh.boundary_edges)[0]])
        with self.assertRaises(ValueError):
            edge_operators(mesh, self.dofmaps[2], edges, edge_rule(4))


class LoadTestCase(unittest.TestCase):

    def test_should_integrate_unit_load_to_area(self):
        for domain, area in ((DomainType.SQUARE, 1.0), (DomainType.LSHAPE, 0.75)):
            mesh = refine(build_initial(domain), marked_triangles=[1, 2])
            for k in (2, 3):
                load = assemble_load(lambda x, y: np.ones_like(x), mesh, build_dofmap(mesh, k))
                self.assertAlmostEqual(load.sum(), area, delta=1e-13)

    def test_should_vanish_for_zero_load(self):
        mesh = build_initial(DomainType.SQUARE)
        load = assemble_load(example1().load, mesh, build_dofmap(mesh, 3))
        np.testing.assert_array_equal(load, 0.0)

    def test_should_match_high_order_quadrature_for_piecewise_load(self):
        mesh = uniform_refine(uniform_refine(build_initial(DomainType.LSHAPE)))
        dofmap = build_dofmap(mesh, 2)
        f = example3().load
        load = assemble_load(f, mesh, dofmap)

        rule = triangle_rule(12)
        points = mesh.triangle_points(np.arange(mesh.n_triangles), rule.points)
        values = f(points[..., 0], points[..., 1])
        table = dofmap.element.tabulate(rule.points)[0]
        local = np.einsum('t,p,tp,pn->tn', mesh.determinants, rule.weights, values, table)
        oracle = np.bincount(dofmap.cell_dofs.ravel(), weights=local.ravel(), minlength=dofmap.ndof)
        np.testing.assert_allclose(load, oracle, atol=1e-5 * np.abs(oracle).max())


class BoundaryDataTestCase(unittest.TestCase):

    def test_should_vanish_for_clamped_data(self):
        mesh = build_initial(DomainType.SQUARE)

        def gradient(x, y):
            a, b = x ** 2 - 0.25, y ** 2 - 0.25
            return np.stack([4.0 * x * a * b ** 2, 4.0 * y * b * a ** 2], axis=-1)

        for k in (2, 3):
            vector = assemble_inhomogeneous(gradient, mesh, build_dofmap(mesh, k), 6.0)
            np.testing.assert_allclose(vector, 0.0, atol=1e-12)

    def test_should_contribute_for_radial_solution(self):
        mesh = build_initial(DomainType.SQUARE)
        problem = example1()
        vector = assemble_inhomogeneous(problem.exact.gradient, mesh, build_dofmap(mesh, 2), 6.0)
        self.assertGreater(np.abs(vector).max(), 1e-3)

    def test_should_fix_boundary_dofs_to_interpolated_values(self):
        mesh = build_initial(DomainType.SQUARE)
        dofmap = build_dofmap(mesh, 2)
        problem = example1()
        matrix = assemble_stiffness(mesh, dofmap, 6.0)
        system = impose_boundary(matrix, np.zeros(dofmap.ndof), dofmap, problem.boundary_function())
        self.assertEqual(system.matrix.shape, (49, 49))
        full = system.expand(np.zeros(system.free.size))
        expected = interpolate(problem.exact.value, dofmap)
        np.testing.assert_allclose(full[dofmap.boundary_dofs], expected[dofmap.boundary_dofs])
        np.testing.assert_array_equal(full[system.free], 0.0)
        np.testing.assert_array_equal(system.restrict(full), np.zeros(system.free.size))

    def test_should_fix_boundary_dofs_to_zero(self):
        mesh = build_initial(DomainType.LSHAPE)
        dofmap = build_dofmap(mesh, 3)
        matrix = assemble_stiffness(mesh, dofmap, 18.0)
        rhs = np.arange(dofmap.ndof, dtype=float)
        system = impose_boundary(matrix, rhs, dofmap)
        np.testing.assert_array_equal(system.rhs, rhs[dofmap.interior_dofs])
        np.testing.assert_array_equal(system.expand(np.ones(system.free.size))[dofmap.boundary_dofs], 0.0)
