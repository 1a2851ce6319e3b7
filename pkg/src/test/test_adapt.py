import unittest
from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.plate_obstacle.adaptivity.adapt import (adaptive_solve, check_load_interfaces, dorfler_mark, fit_rate,
                                                lambda_gap_table)
from src.plate_obstacle.adaptivity.level_record import LevelRecord
from src.plate_obstacle.adaptivity.study_mode import StudyMode
from src.plate_obstacle.data.problems import example1, example2, example3
from src.plate_obstacle.discretization.domain_type import DomainType
from src.plate_obstacle.discretization.mesh import Mesh, build_initial, refine, uniform_refine
from src.plate_obstacle.utils.exceptions import InsufficientLevelsError, MarkingError, ProblemDefinitionError


def make_record(level: int, ndof: int, **values) -> LevelRecord:
    defaults = dict(h_max=1.0 / (level + 1), eta=1.0, err_h=None, q1=0.0, q2=0.0, lambda_mass=0.0, lambda_gap=None,
                    pdas_iters=1, wall_ms=0.0)
    defaults.update(values)
    return LevelRecord(level=level, ndof=ndof, **defaults)


class DorflerMarkTestCase(unittest.TestCase):

    def test_should_mark_dominant_entity(self):
        np.testing.assert_array_equal(dorfler_mark(np.array([16.0, 9.0, 4.0, 1.0]), 0.5), [0])

    def test_should_mark_half_of_equal_indicators_rounded_up(self):
        marked = dorfler_mark(np.full(7, 2.5), 0.5)
        np.testing.assert_array_equal(marked, [0, 1, 2, 3])

    def test_should_mark_all_positive_entities_for_theta_near_one(self):
        marked = dorfler_mark(np.array([3.0, 0.0, 2.0, 0.0, 1.0]), 1.0 - 1e-9)
        self.assertEqual(set(marked.tolist()), {0, 2, 4})

    def test_should_return_nothing_for_vanishing_indicators(self):
        self.assertEqual(dorfler_mark(np.zeros(4), 0.5).size, 0)

    def test_should_reject_invalid_input(self):
        with self.assertRaises(MarkingError):
            dorfler_mark(np.zeros(0), 0.5)
        for theta in (0.0, 1.0, 1.5):
            with self.assertRaises(MarkingError):
                dorfler_mark(np.ones(3), theta)

    @settings(max_examples=200, deadline=None, derandomize=True)
    @given(st.lists(st.integers(min_value=0, max_value=1000), min_size=1, max_size=40),
           st.floats(min_value=0.05, max_value=0.95))
    def test_should_mark_minimal_prefix(self, values, theta):
        indicators = np.array(values, dtype=float)
        marked = dorfler_mark(indicators, theta)
        total = indicators.sum()
        if total == 0.0:
            self.assertEqual(marked.size, 0)
            return
        self.assertEqual(len(set(marked.tolist())), marked.size)
        self.assertGreaterEqual(indicators[marked].sum(), theta * total)
        self.assertLess(indicators[marked[:-1]].sum(), theta * total)
        unmarked = np.setdiff1d(np.arange(indicators.size), marked)
        if unmarked.size:
            self.assertGreaterEqual(indicators[marked].min(), indicators[unmarked].max())
        keys = [(-indicators[i], i) for i in marked]
        self.assertEqual(keys, sorted(keys))


class FitRateTestCase(unittest.TestCase):

    def test_should_recover_power_law_slopes(self):
        ndofs = [100, 200, 400, 800, 1600]
        history = [make_record(level, n, eta=1.0 / n, err_h=3.0 * n ** -0.5) for level, n in enumerate(ndofs)]
        self.assertAlmostEqual(fit_rate(history, 'eta', 4), -1.0, delta=1e-12)
        self.assertAlmostEqual(fit_rate(history, 'err_h', 5), -0.5, delta=1e-12)

    def test_should_fit_against_mesh_size(self):
        history = [make_record(level, 10 * 4 ** level, h_max=2.0 ** -level, err_h=2.0 ** -level)
                   for level in range(4)]
        self.assertAlmostEqual(fit_rate(history, 'err_h', 4, against='h_max'), 1.0, delta=1e-12)

    def test_should_reject_short_or_incomplete_histories(self):
        history = [make_record(level, 10 * (level + 1)) for level in range(3)]
        with self.assertRaises(InsufficientLevelsError):
            fit_rate(history, 'eta', 2)
        with self.assertRaises(InsufficientLevelsError):
            fit_rate(history, 'eta', 4)
        with self.assertRaises(InsufficientLevelsError):
            fit_rate(history, 'err_h', 3)
        with self.assertRaises(InsufficientLevelsError):
            fit_rate(history, 'q1', 3)

    def test_should_tabulate_scaled_multiplier_gaps(self):
        history = [make_record(0, 100, lambda_mass=1.0),
                   make_record(1, 400, lambda_mass=1.5, lambda_gap=0.5),
                   make_record(2, 1600, lambda_mass=1.25, lambda_gap=0.25)]
        table = lambda_gap_table(history, gamma=0.5)
        self.assertEqual(list(table.columns), ['level', 'ndof', 'lambda_gap', 'scaled_gap'])
        np.testing.assert_allclose(table['scaled_gap'], [5.0, 5.0])
        self.assertTrue(lambda_gap_table(history[:1]).empty)


class AdaptiveSolveTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.result = adaptive_solve(example1(), 2, max_dof=1500, show_progress=False)

    def test_should_increase_dofs_until_limit(self):
        ndofs = [record.ndof for record in self.result.history]
        self.assertGreaterEqual(len(ndofs), 3)
        self.assertTrue(all(b > a for a, b in zip(ndofs, ndofs[1:])))
        self.assertLessEqual(ndofs[-1], 1500)
        self.assertEqual(ndofs[0], 81)

    def test_should_fill_every_record(self):
        for index, record in enumerate(self.result.history):
            self.assertEqual(record.level, index)
            self.assertGreater(record.eta, 0.0)
            self.assertGreater(record.err_h, 0.0)
            self.assertGreaterEqual(record.q1, 0.0)
            self.assertGreaterEqual(record.q2, 0.0)
            self.assertGreater(record.lambda_mass, 0.0)
            self.assertGreaterEqual(record.pdas_iters, 1)
            self.assertEqual(record.lambda_gap is None, index == 0)

    def test_should_keep_meshes_conforming(self):
        for state in self.result.levels:
            self.assertEqual(state.mesh.check_invariants(), [])
            self.assertEqual(state.dofmap.ndof, self.result.history[state.level].ndof)

    def test_should_be_deterministic(self):
        again = adaptive_solve(example1(), 2, max_dof=1500, show_progress=False)
        self.assertEqual(len(again.history), len(self.result.history))
        for first, second in zip(self.result.history, again.history):
            self.assertEqual(replace(first, wall_ms=0.0), replace(second, wall_ms=0.0))

    def test_should_refine_uniformly(self):
        result = adaptive_solve(example1(), 2, max_dof=1500, mode=StudyMode.UNIFORM, show_progress=False)
        self.assertEqual([record.ndof for record in result.history], [81, 289, 1089])
        self.assertEqual([state.mesh.n_triangles for state in result.levels], [32, 128, 512])

    def test_should_keep_multipliers_zero_for_inactive_obstacle(self):
        problem = replace(example2(), load=lambda x, y: np.full_like(x, 1e3),
                          obstacle=lambda x, y: np.full_like(x, -1e9))
        result = adaptive_solve(problem, 2, max_dof=800, reference_errors=False, show_progress=False)
        self.assertGreaterEqual(len(result.history), 2)
        for record in result.history:
            self.assertEqual(record.lambda_mass, 0.0)
            self.assertIsNone(record.err_h)
        for record in result.history[1:]:
            self.assertEqual(record.lambda_gap, 0.0)

    def test_should_refine_uniformly_when_estimator_vanishes(self):
        problem = replace(example2(), obstacle=lambda x, y: np.full_like(x, -1e9))
        result = adaptive_solve(problem, 2, max_dof=800, reference_errors=False, show_progress=False)
        self.assertEqual([record.ndof for record in result.history], [65, 225])
        for record in result.history:
            self.assertEqual(record.eta, 0.0)
            self.assertEqual(record.lambda_mass, 0.0)
        self.assertEqual(result.levels[1].mesh.n_triangles, 4 * result.levels[0].mesh.n_triangles)

    def test_should_compute_reference_errors_without_exact_solution(self):
        result = adaptive_solve(example2(), 2, max_dof=800, show_progress=False)
        self.assertIsNotNone(result.reference)
        errors = [record.err_h for record in result.history]
        self.assertTrue(all(error is not None and error > 0.0 for error in errors))
        self.assertLess(errors[-1], errors[0])

    def test_should_report_every_level_to_callback(self):
        seen = []
        adaptive_solve(example2(), 3, max_dof=600, reference_errors=False, show_progress=False,
                       on_level=lambda state, record: seen.append((state.level, record.ndof)))
        self.assertGreaterEqual(len(seen), 2)
        self.assertEqual([level for level, _ in seen], list(range(len(seen))))


class LoadInterfaceTestCase(unittest.TestCase):

    def test_should_accept_meshes_aligned_with_load_jumps(self):
        mesh = build_initial(DomainType.LSHAPE)
        for _ in range(2):
            for degree in (2, 3):
                check_load_interfaces(example3(), mesh, degree)
            mesh = uniform_refine(refine(mesh, marked_triangles=[0]))

    def test_should_reject_triangle_crossing_load_jump(self):
        mesh = Mesh(np.array([[-0.5, -0.5], [0.25, -0.5], [-0.5, 0.0]]), np.array([[0, 1, 2]]))
        with self.assertRaises(ProblemDefinitionError):
            check_load_interfaces(example3(), mesh, 2)

    def test_should_ignore_problems_with_smooth_load(self):
        mesh = Mesh(np.array([[-0.5, -0.5], [0.25, -0.5], [-0.5, 0.25]]), np.array([[0, 1, 2]]))
        check_load_interfaces(example2(), mesh, 2)
