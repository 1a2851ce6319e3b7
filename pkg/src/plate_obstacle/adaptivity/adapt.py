import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.plate_obstacle.adaptivity.estimator import (EstimatorReport, ReferenceSolution, error_norm, estimate,
                                                     lambda_gap, lambda_mass, q1, q2)
from src.plate_obstacle.adaptivity.level_record import LevelRecord
from src.plate_obstacle.adaptivity.study_mode import StudyMode
from src.plate_obstacle.data.problems import ProblemSpec
from src.plate_obstacle.discretization.assembly import (ReducedSystem, assemble_inhomogeneous, assemble_load,
                                                        assemble_stiffness, impose_boundary)
from src.plate_obstacle.discretization.domain_type import BoundaryMode
from src.plate_obstacle.discretization.mesh import Mesh, ancestor_map, build_initial, refine, uniform_refine
from src.plate_obstacle.discretization.quadrature import estimator_degree, load_degree, triangle_rule
from src.plate_obstacle.discretization.space import DofMap, build_dofmap, transfer
from src.plate_obstacle.solvers.linsolve import DEFAULT_TOLERANCE
from src.plate_obstacle.solvers.vi_solver import DiscreteSolution, pdas
from src.plate_obstacle.utils.exceptions import (InsufficientLevelsError, MarkingError, MeshRefinementError,
                                                 ProblemDefinitionError)

logger = logging.getLogger(__name__)

DEFAULT_THETA = 0.5
DEFAULT_MAX_DOF = 20_000
INTERFACE_TOLERANCE = 1e-12


def dorfler_mark(indicators: np.ndarray, theta: float) -> np.ndarray:
    """
        Bulk marking: sorts squared indicators in decreasing order, ties broken by increasing id, and returns the
        ids of the shortest prefix whose sum reaches theta times the total.

        Args:
            indicators (np.ndarray): Squared indicator of every entity, indexed by entity id.
            theta (float): Bulk fraction in (0, 1).

        Raises:
            MarkingError: If there are no indicators or theta is outside (0, 1).

        Returns:
            np.ndarray: Marked ids in marking order.
    """
    values = np.asarray(indicators, dtype=float)
    if values.size == 0:
        raise MarkingError('Cannot mark from an empty indicator list.')
    if not 0.0 < theta < 1.0:
        raise MarkingError(f'Bulk fraction must lie in (0, 1), got {theta}.')

    order = np.lexsort((np.arange(values.size), -values))
    cumulative = np.cumsum(values[order])
    total = cumulative[-1]
    if total <= 0.0:
        return np.empty(0, dtype=np.int64)
    count = min(int(np.searchsorted(cumulative, theta * total, side='left')) + 1, values.size)
    return order[:count]


def check_load_interfaces(problem: ProblemSpec, mesh: Mesh, degree: int):
    """
        Ensures that no triangle crosses a line on which the load jumps, so that every quadrature point of the load
        and estimator rules lies strictly inside one region where the load is smooth.

        Raises:
            ProblemDefinitionError: If a triangle straddles such a line or a quadrature point lies on it.
    """
    if not problem.load_interfaces:
        return
    triangles = np.arange(mesh.n_triangles)
    corners = mesh.vertices[mesh.triangles]
    tolerance = INTERFACE_TOLERANCE * mesh.diameters[:, None]
    for rule_degree in sorted({load_degree(degree), estimator_degree(degree)}):
        points = mesh.triangle_points(triangles, triangle_rule(rule_degree).points)
        for axis in problem.load_interfaces:
            straddling = (corners[..., axis].min(axis=1) < -tolerance[:, 0]) & \
                         (corners[..., axis].max(axis=1) > tolerance[:, 0])
            touching = np.any(np.abs(points[..., axis]) <= tolerance, axis=1)
            offenders = np.flatnonzero(straddling | touching)
            if offenders.size:
                raise ProblemDefinitionError(
                    f'Load of {problem.name} jumps across x{axis + 1} = 0 inside triangles {offenders[:10].tolist()}.')


@dataclass
class SolvedLevel:
    """
        Discrete solution on one mesh, together with the boundary-reduced system it solves. `reduced` indexes the
        free dofs of `system`, `solution` the full dof vector.
    """
    solution: DiscreteSolution
    reduced: DiscreteSolution
    system: ReducedSystem
    obstacle: np.ndarray


@dataclass
class LevelState:
    level: int
    mesh: Mesh
    dofmap: DofMap
    solution: DiscreteSolution
    report: EstimatorReport
    oscillation: float


@dataclass
class StudyResult:
    problem: ProblemSpec
    degree: int
    sigma: float
    mode: StudyMode
    history: list[LevelRecord]
    levels: list[LevelState]
    reference: Optional[ReferenceSolution] = None


def solve_discrete(problem: ProblemSpec,
                   mesh: Mesh,
                   dofmap: DofMap,
                   sigma: float,
                   warm_start: Optional[DiscreteSolution] = None,
                   pdas_constant: Optional[float] = None,
                   tol: float = DEFAULT_TOLERANCE) -> SolvedLevel:
    """
        Assembles the plate obstacle problem on a mesh, eliminates boundary dofs and solves it with the primal-dual
        active set method, starting from `warm_start` when given (a full-length solution on `dofmap`).
    """
    matrix = assemble_stiffness(mesh, dofmap, sigma)
    rhs = assemble_load(problem.load, mesh, dofmap)
    if problem.boundary_mode is BoundaryMode.INTERPOLATED:
        rhs = rhs + assemble_inhomogeneous(problem.exact.gradient, mesh, dofmap, sigma)
    system = impose_boundary(matrix, rhs, dofmap, problem.boundary_function())

    constrained = np.searchsorted(system.free, dofmap.constrained)
    coordinates = dofmap.coordinates[dofmap.constrained]
    obstacle = np.asarray(problem.obstacle(coordinates[:, 0], coordinates[:, 1]), dtype=float)

    x0 = lambda0 = None
    if warm_start is not None:
        x0 = system.restrict(warm_start.coefficients)
        lambda0 = warm_start.multipliers

    reduced = pdas(system.matrix, system.rhs, obstacle, constrained, x0=x0, lambda0=lambda0, c=pdas_constant,
                   tol=tol)
    solution = reduced.with_coefficients(system.expand(reduced.coefficients), dofmap.constrained)
    return SolvedLevel(solution=solution, reduced=reduced, system=system, obstacle=obstacle)


def _warm_start(previous: LevelState, mesh: Mesh, dofmap: DofMap) -> DiscreteSolution:
    coefficients = transfer(previous.solution.coefficients, previous.mesh, previous.dofmap, mesh, dofmap,
                            mesh.parent)
    by_vertex = np.zeros(mesh.n_vertices)
    by_vertex[previous.solution.constrained] = previous.solution.multipliers
    multipliers = by_vertex[dofmap.constrained]
    return DiscreteSolution(coefficients=coefficients, multipliers=multipliers, constrained=dofmap.constrained,
                            active=multipliers > 0.0, iterations=0)


def adaptive_solve(problem: ProblemSpec,
                   degree: int,
                   sigma: Optional[float] = None,
                   theta: float = DEFAULT_THETA,
                   max_dof: int = DEFAULT_MAX_DOF,
                   mode: StudyMode = StudyMode.ADAPTIVE,
                   tol: float = DEFAULT_TOLERANCE,
                   pdas_constant: Optional[float] = None,
                   reference_errors: bool = True,
                   on_level: Optional[Callable[[LevelState, LevelRecord], None]] = None,
                   show_progress: bool = True) -> StudyResult:
    """
        Runs the Solve, Estimate, Mark, Refine loop until the next mesh would carry more than `max_dof` dofs.

        Adaptive mode marks triangles by eta_T^2 and edges by eta_e1^2 + eta_e2^2 + eta_e3^2 in one bulk pool and
        falls back to a uniform step when the estimator vanishes; uniform mode refines every triangle. Errors come
        from the exact solution when the problem has one, and otherwise from a post-pass against a reference
        solution on the uniform refinement of the final mesh.

        Args:
            problem (ProblemSpec): The benchmark problem.
            degree (int): Polynomial degree, 2 or 3.
            sigma (Optional[float]): Penalty parameter; the problem default for `degree` when omitted.
            theta (float): Bulk fraction of the marking.
            max_dof (int): Dof limit of the study.
            mode (StudyMode): Adaptive or uniform refinement.
            tol (float): Relative residual tolerance of the linear solves.
            pdas_constant (Optional[float]): Active set constant override.
            reference_errors (bool): Whether to run the reference post-pass for problems without exact solution.
            on_level (Optional[Callable]): Called with the state and record of every solved level.
            show_progress (bool): Whether to display a progress bar.

        Raises:
            MeshRefinementError: If refinement fails to increase the number of dofs.
            SolverConvergenceError: If the active set method fails on some level.
            NotPositiveDefiniteError: If a system is not positive definite, typically for a too small sigma.
            ProblemDefinitionError: If a triangle crosses a line on which the load jumps.

        Returns:
            StudyResult: History, per-level states and the reference solution if one was computed.
    """
    sigma = problem.default_sigma(degree) if sigma is None else sigma
    boundary_exact = problem.exact if problem.boundary_mode is BoundaryMode.INTERPOLATED else None
    result = StudyResult(problem=problem, degree=degree, sigma=sigma, mode=mode, history=[], levels=[])

    mesh = build_initial(problem.domain)
    progress = tqdm(desc=f'{problem.name} k={degree} {mode.value}', unit='level', disable=not show_progress)
    with progress:
        while True:
            start = time.perf_counter()
            dofmap = build_dofmap(mesh, degree)
            if result.levels:
                if dofmap.ndof > max_dof:
                    break
                if dofmap.ndof <= result.levels[-1].dofmap.ndof:
                    raise MeshRefinementError(f'Refinement did not increase the dof count ({dofmap.ndof}).')

            check_load_interfaces(problem, mesh, degree)
            warm_start = _warm_start(result.levels[-1], mesh, dofmap) if result.levels else None
            solved = solve_discrete(problem, mesh, dofmap, sigma, warm_start, pdas_constant, tol)
            solution = solved.solution

            report = estimate(mesh, dofmap, solution, problem.load, sigma, boundary_exact)
            error = (error_norm(mesh, dofmap, solution.coefficients, sigma, exact=problem.exact)
                     if problem.exact is not None else None)
            mass = lambda_mass(solution)
            record = LevelRecord(level=len(result.history),
                                 ndof=dofmap.ndof,
                                 h_max=mesh.h_max(),
                                 eta=report.total,
                                 err_h=error,
                                 q1=q1(mesh, dofmap, solution, boundary_exact, report=report),
                                 q2=q2(mesh, dofmap, solution, problem.obstacle),
                                 lambda_mass=mass,
                                 lambda_gap=lambda_gap(result.history[-1].lambda_mass, mass) if result.history
                                 else None,
                                 pdas_iters=solution.iterations,
                                 wall_ms=(time.perf_counter() - start) * 1e3)
            state = LevelState(level=record.level, mesh=mesh, dofmap=dofmap, solution=solution, report=report,
                               oscillation=report.oscillation_total)
            result.history.append(record)
            result.levels.append(state)

            logger.info(f'{problem.name} level {record.level}: ndof={record.ndof} eta={record.eta:.6e} '
                        f'lambda={record.lambda_mass:.6f} pdas={record.pdas_iters} active={solution.n_active}')
            progress.update(1)
            progress.set_postfix(ndof=record.ndof, eta=f'{record.eta:.3e}')
            if on_level is not None:
                on_level(state, record)

            if mode is StudyMode.UNIFORM:
                mesh = uniform_refine(mesh)
            else:
                marked = dorfler_mark(np.concatenate([report.triangle_indicators(), report.edge_indicators()]),
                                      theta)
                if marked.size == 0:
                    logger.info(f'Estimator vanishes on level {record.level}; refining uniformly')
                    mesh = uniform_refine(mesh)
                else:
                    mesh = refine(mesh, marked[marked < mesh.n_triangles],
                                  marked[marked >= mesh.n_triangles] - mesh.n_triangles)

    if problem.exact is None and reference_errors:
        compute_reference_errors(result, tol=tol, pdas_constant=pdas_constant)
    return result


def compute_reference_errors(result: StudyResult,
                             tol: float = DEFAULT_TOLERANCE,
                             pdas_constant: Optional[float] = None) -> ReferenceSolution:
    """
        Solves on the uniform refinement of the final mesh and fills err_h of every level with the mesh-dependent
        distance to that reference solution.
    """
    final = result.levels[-1]
    fine_mesh = uniform_refine(final.mesh)
    fine_dofmap = build_dofmap(fine_mesh, result.degree)
    logger.info(f'Computing reference solution with {fine_dofmap.ndof} dofs')
    solved = solve_discrete(result.problem, fine_mesh, fine_dofmap, result.sigma,
                            _warm_start(final, fine_mesh, fine_dofmap), pdas_constant, tol)

    meshes = [state.mesh for state in result.levels] + [fine_mesh]
    for index, (state, record) in enumerate(zip(result.levels, result.history)):
        reference = ReferenceSolution(mesh=fine_mesh, dofmap=fine_dofmap, coefficients=solved.solution.coefficients,
                                      ancestors=ancestor_map(meshes, index))
        record.err_h = error_norm(state.mesh, state.dofmap, state.solution.coefficients, result.sigma,
                                  reference=reference)

    result.reference = ReferenceSolution(mesh=fine_mesh, dofmap=fine_dofmap,
                                         coefficients=solved.solution.coefficients,
                                         ancestors=ancestor_map(meshes, len(result.levels) - 1))
    return result.reference


def fit_rate(history: list[LevelRecord], field: str, window: int, against: str = 'ndof') -> float:
    """
        Least-squares slope of log(field) against log(ndof), or log(h_max), over the final `window` levels.

        Raises:
            InsufficientLevelsError: If fewer than max(window, 3) levels carry positive values of both quantities.
    """
    if window < 3:
        raise InsufficientLevelsError(f'A rate needs a window of at least 3 levels, got {window}.')
    if len(history) < window:
        raise InsufficientLevelsError(f'History has {len(history)} levels, fewer than the window of {window}.')

    rows = history[-window:]
    x = np.array([getattr(row, against) for row in rows], dtype=float)
    y = np.array([np.nan if getattr(row, field) is None else getattr(row, field) for row in rows], dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(y > 0.0) and np.all(x > 0.0)):
        raise InsufficientLevelsError(f'Field {field} is missing or non-positive within the last {window} levels.')
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def lambda_gap_table(history: list[LevelRecord], gamma: float = 1.0) -> pd.DataFrame:
    """
        Table of the multiplier mass change between consecutive levels, scaled by ndof^gamma of the coarser level.
    """
    rows = []
    for coarse, fine in zip(history[:-1], history[1:]):
        rows.append({'level': coarse.level, 'ndof': coarse.ndof, 'lambda_gap': fine.lambda_gap,
                     'scaled_gap': fine.lambda_gap * coarse.ndof ** gamma})
    return pd.DataFrame(rows, columns=['level', 'ndof', 'lambda_gap', 'scaled_gap'])
