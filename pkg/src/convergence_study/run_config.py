import logging
from argparse import ArgumentParser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from src.plate_obstacle.adaptivity.adapt import DEFAULT_MAX_DOF, DEFAULT_THETA
from src.plate_obstacle.adaptivity.estimator import DEFAULT_RELIABILITY_CONSTANT
from src.plate_obstacle.adaptivity.study_mode import StudyMode
from src.plate_obstacle.data.problems import DEFAULT_SIGMA, PROBLEMS, get_problem
from src.plate_obstacle.discretization.mesh import build_initial
from src.plate_obstacle.discretization.space import SUPPORTED_DEGREES, build_dofmap
from src.plate_obstacle.solvers.linsolve import DEFAULT_TOLERANCE
from src.plate_obstacle.utils.exceptions import ConfigValidationError

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    problem: str = 'example1'
    degree: int = 2
    sigma: Optional[float] = None
    theta: float = DEFAULT_THETA
    mode: StudyMode = StudyMode.ADAPTIVE
    max_dof: int = DEFAULT_MAX_DOF
    out: str = 'results'
    dump_mesh: bool = False
    dump_estimator: bool = False
    tol: float = DEFAULT_TOLERANCE
    pdas_constant: Optional[float] = None
    reliability_constant: float = DEFAULT_RELIABILITY_CONSTANT

    @property
    def penalty(self) -> float:
        return self.sigma if self.sigma is not None else DEFAULT_SIGMA[self.degree]


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {value!r}')


def _parse_optional_float(value: str) -> Optional[float]:
    return None if value.strip().lower() in ('', 'none', 'auto') else float(value)


CONVERTERS = {
    'problem': str,
    'degree': int,
    'sigma': _parse_optional_float,
    'theta': float,
    'mode': StudyMode,
    'max_dof': int,
    'out': str,
    'dump_mesh': _parse_bool,
    'dump_estimator': _parse_bool,
    'tol': float,
    'pdas_constant': _parse_optional_float,
    'reliability_constant': float,
}


def read_config_file(path: str) -> dict[str, str]:
    """
        Reads `key=value` lines; `#` starts a comment and dashes in keys are read as underscores.

        Raises:
            ConfigValidationError: If a line has no `=`.
    """
    values = {}
    problems = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            problems.append(f'{path}:{number}: expected key=value, got {line!r}')
            continue
        key, value = line.split('=', 1)
        values[key.strip().replace('-', '_')] = value.strip()
    if problems:
        raise ConfigValidationError(problems)
    return values


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description='Convergence studies of the C0 interior penalty method for the clamped '
                                        'Kirchhoff plate obstacle problem.')
    parser.add_argument('--problem', type=str, help=f'Benchmark problem, one of {sorted(PROBLEMS)}.')
    parser.add_argument('--degree', type=str, help='Polynomial degree, 2 or 3.')
    parser.add_argument('--sigma', type=str, help='Penalty parameter; 6 for degree 2 and 18 for degree 3 by default.')
    parser.add_argument('--theta', type=str, help='Bulk fraction of the marking, in (0, 1).')
    parser.add_argument('--mode', type=str, help='Refinement mode, "adaptive" or "uniform".')
    parser.add_argument('--max-dof', dest='max_dof', type=str, help='Stop before a level with more dofs than this.')
    parser.add_argument('--out', type=str, help='Output directory.')
    parser.add_argument('--dump-mesh', dest='dump_mesh', action='store_const', const='true',
                        help='Write the mesh of every level and the final coincidence set.')
    parser.add_argument('--dump-estimator', dest='dump_estimator', action='store_const', const='true',
                        help='Write the estimator breakdown of every level.')
    parser.add_argument('--tol', type=str, help='Relative residual tolerance of the linear solves.')
    parser.add_argument('--pdas-constant', dest='pdas_constant', type=str,
                        help='Active set constant; 100 times the largest diagonal entry by default.')
    parser.add_argument('--reliability-constant', dest='reliability_constant', type=str,
                        help='Constant C of the computable reliability bound.')
    parser.add_argument('--config', type=str, help='File of key=value lines, overridden by flags.')
    return parser


def _validate(config: RunConfig) -> list[str]:
    problems = []
    if config.problem not in PROBLEMS:
        problems.append(f'problem: unknown problem {config.problem!r}, choose one of {sorted(PROBLEMS)}')
    if config.degree not in SUPPORTED_DEGREES:
        problems.append(f'degree: must be one of {SUPPORTED_DEGREES}, got {config.degree}')
    if not 0.0 < config.theta < 1.0:
        problems.append(f'theta: must lie in (0, 1), got {config.theta}')
    if config.sigma is not None and config.sigma < 1.0:
        problems.append(f'sigma: must be at least 1, got {config.sigma}')
    if config.tol <= 0.0:
        problems.append(f'tol: must be positive, got {config.tol}')
    if config.pdas_constant is not None and config.pdas_constant <= 0.0:
        problems.append(f'pdas_constant: must be positive, got {config.pdas_constant}')
    if config.reliability_constant <= 0.0:
        problems.append(f'reliability_constant: must be positive, got {config.reliability_constant}')
    if config.problem in PROBLEMS and config.degree in SUPPORTED_DEGREES:
        initial = build_dofmap(build_initial(get_problem(config.problem).domain), config.degree).ndof
        if config.max_dof < initial:
            problems.append(f'max_dof: must be at least the initial dof count {initial}, got {config.max_dof}')
    return problems


def parse_config(argv: list[str], config_file: Optional[str] = None) -> RunConfig:
    """
        Builds a run configuration from defaults, an optional key=value file and command-line flags, in increasing
        order of precedence.

        Args:
            argv (list[str]): Command-line arguments without the program name.
            config_file (Optional[str]): Configuration file, used when argv carries no --config flag.

        Raises:
            ConfigValidationError: Listing every unknown key, malformed value and out-of-range setting.

        Returns:
            RunConfig: The validated configuration.
    """
    args = build_parser().parse_args(argv)
    config_file = args.config if args.config is not None else config_file

    raw = {}
    problems = []
    if config_file is not None:
        try:
            raw.update(read_config_file(config_file))
        except OSError as e:
            problems.append(f'config: unable to read {config_file}: {e.strerror or e}')
        except ConfigValidationError as e:
            problems.extend(e.problems)
    raw.update({name: value for name, value in vars(args).items() if name != 'config' and value is not None})

    values = {}
    rejected = set()
    known = {field.name for field in fields(RunConfig)}
    for key, value in raw.items():
        if key not in known:
            problems.append(f'{key}: unknown configuration key')
            continue
        try:
            values[key] = CONVERTERS[key](value)
        except ValueError:
            problems.append(f'{key}: malformed value {value!r}')
            rejected.add(key)

    config = RunConfig(**values)
    if 'problem' in rejected or 'degree' in rejected:
        rejected.add('max_dof')
    problems.extend(problem for problem in _validate(config) if problem.split(':', 1)[0] not in rejected)
    if problems:
        raise ConfigValidationError(problems)
    logger.debug(f'Run configuration: {config}')
    return config
