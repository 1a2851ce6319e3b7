import unittest
from math import factorial

import numpy as np

from src.plate_obstacle.discretization.quadrature import MAX_TRIANGLE_DEGREE, edge_rule, triangle_rule
from src.plate_obstacle.utils.exceptions import QuadratureError


def monomial_integral(a: int, b: int) -> float:
    return factorial(a) * factorial(b) / factorial(a + b + 2)


class TriangleRuleTestCase(unittest.TestCase):

    def test_should_integrate_constant_to_reference_area(self):
        for degree in range(MAX_TRIANGLE_DEGREE + 1):
            self.assertAlmostEqual(triangle_rule(degree).weights.sum(), 0.5, delta=1e-15)

    def test_should_integrate_xy_exactly(self):
        rule = triangle_rule(2)
        x, y = rule.points.T
        self.assertAlmostEqual(np.dot(rule.weights, x * y), 1.0 / 24.0, delta=1e-15)

    def test_should_integrate_x2_y2_exactly_with_degree_four_rule(self):
        rule = triangle_rule(4)
        x, y = rule.points.T
        self.assertAlmostEqual(np.dot(rule.weights, x ** 2 * y ** 2), 1.0 / 180.0, delta=1e-15)

    def test_should_integrate_every_monomial_up_to_stated_degree(self):
        for degree in range(MAX_TRIANGLE_DEGREE + 1):
            rule = triangle_rule(degree)
            x, y = rule.points.T
            for total in range(degree + 1):
                for a in range(total + 1):
                    b = total - a
                    expected = monomial_integral(a, b)
                    computed = np.dot(rule.weights, x ** a * y ** b)
                    self.assertLessEqual(abs(computed - expected), 1e-13 * expected,
                                         msg=f'degree {degree}, monomial x^{a} y^{b}')

    def test_should_keep_points_inside_reference_triangle(self):
        for degree in range(MAX_TRIANGLE_DEGREE + 1):
            points = triangle_rule(degree).points
            self.assertTrue(np.all(points > 0.0))
            self.assertTrue(np.all(points.sum(axis=1) < 1.0))

    def test_should_raise_beyond_supported_degree(self):
        with self.assertRaises(QuadratureError):
            triangle_rule(MAX_TRIANGLE_DEGREE + 1)
        with self.assertRaises(QuadratureError):
            triangle_rule(-1)


class EdgeRuleTestCase(unittest.TestCase):

    def test_should_integrate_constant_to_one(self):
        self.assertAlmostEqual(edge_rule(0).weights.sum(), 1.0, delta=1e-15)

    def test_should_integrate_cubic_with_two_points(self):
        rule = edge_rule(3)
        self.assertEqual(rule.size, 2)
        self.assertAlmostEqual(np.dot(rule.weights, rule.points ** 3), 0.25, delta=1e-15)

    def test_should_integrate_sixth_power_with_four_points(self):
        rule = edge_rule(7)
        self.assertEqual(rule.size, 4)
        self.assertAlmostEqual(np.dot(rule.weights, rule.points ** 6), 1.0 / 7.0, delta=1e-15)

    def test_should_integrate_every_power_up_to_stated_degree(self):
        for degree in range(16):
            rule = edge_rule(degree)
            for power in range(degree + 1):
                self.assertAlmostEqual(np.dot(rule.weights, rule.points ** power), 1.0 / (power + 1), delta=1e-14)
