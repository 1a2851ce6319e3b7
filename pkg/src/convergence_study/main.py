import logging
import sys
from pathlib import Path
from typing import Optional

from src.convergence_study.history_io import (FLOAT_FORMAT, write_coincidence, write_estimator, write_history,
                                              write_mesh, write_summary)
from src.convergence_study.run_config import RunConfig, parse_config
from src.plate_obstacle.adaptivity.adapt import (LevelState, StudyResult, adaptive_solve, fit_rate,
                                                 lambda_gap_table)
from src.plate_obstacle.adaptivity.estimator import effectivity, reliability_bound
from src.plate_obstacle.adaptivity.level_record import LevelRecord
from src.plate_obstacle.data.problems import get_problem
from src.plate_obstacle.utils.exceptions import InsufficientLevelsError, PlateObstacleException

logger = logging.getLogger(__name__)

HISTORY_FILE = 'history.csv'
SUMMARY_FILE = 'summary.csv'
LAMBDA_GAP_FILE = 'lambda_gap.csv'
COINCIDENCE_FILE = 'coincidence.txt'
RATE_WINDOW = 5

EXIT_SUCCESS = 0
EXIT_STUDY_FAILURE = 1
EXIT_UNEXPECTED_FAILURE = 2


def summarize(result: StudyResult, config: RunConfig) -> dict[str, Optional[float]]:
    """
        Fitted rates over the final levels and monitors of the final level.
    """
    history = result.history
    window = min(RATE_WINDOW, len(history))
    summary = {}
    for field in ('eta', 'err_h', 'q1', 'q2'):
        try:
            summary[f'{field}_rate'] = fit_rate(history, field, window)
        except InsufficientLevelsError as e:
            logger.warning(f'No rate for {field}: {e}')
            summary[f'{field}_rate'] = None
    try:
        summary['err_h_rate_vs_h'] = fit_rate(history, 'err_h', window, against='h_max')
    except InsufficientLevelsError:
        summary['err_h_rate_vs_h'] = None

    final = history[-1]
    summary['final_ndof'] = final.ndof
    summary['final_lambda_mass'] = final.lambda_mass
    summary['final_oscillation'] = result.levels[-1].oscillation
    summary['final_effectivity'] = effectivity(final.eta, final.err_h)

    bounds = {'discrete_mass': final.lambda_mass}
    if result.problem.multiplier_mass is not None:
        bounds['exact_mass'] = result.problem.multiplier_mass
    for name, mass in bounds.items():
        bound = reliability_bound(final.eta, final.q1, final.q2, mass, config.reliability_constant)
        summary[f'reliability_ratio_{name}'] = final.err_h / bound if final.err_h is not None else None
    return summary


def run(config: RunConfig) -> int:
    """
        Runs one convergence study and writes its outputs into `config.out`.

        Returns:
            int: Exit status 0.
    """
    problem = get_problem(config.problem)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / HISTORY_FILE
    records: list[LevelRecord] = []

    def on_level(state: LevelState, record: LevelRecord):
        records.append(record)
        write_history(records, history_path)
        if config.dump_mesh:
            write_mesh(state.mesh, out / f'level_{record.level:03d}_mesh.txt')
        if config.dump_estimator:
            write_estimator(state.report, out / f'level_{record.level:03d}_estimator.csv')
        ratio = effectivity(record.eta, record.err_h)
        if ratio is not None:
            logger.info(f'Level {record.level} effectivity eta/err = {ratio:.4f}')

    result = adaptive_solve(problem, config.degree, sigma=config.penalty, theta=config.theta,
                            max_dof=config.max_dof, mode=config.mode, tol=config.tol,
                            pdas_constant=config.pdas_constant, on_level=on_level)
    write_history(result.history, history_path)
    logger.info(f'Wrote {len(result.history)} levels to {history_path}')

    if config.dump_mesh:
        final = result.levels[-1]
        write_coincidence(final.dofmap, final.solution, out / COINCIDENCE_FILE)

    summary = summarize(result, config)
    for quantity, value in summary.items():
        logger.info(f'{quantity}: {value}')
    write_summary(summary, out / SUMMARY_FILE)

    gamma = 0.5 if config.degree == 2 else 1.0
    table = lambda_gap_table(result.history, gamma)
    table.to_csv(out / LAMBDA_GAP_FILE, index=False, float_format=FLOAT_FORMAT)
    if not table.empty:
        logger.info(f'Multiplier mass changes scaled by ndof^{gamma}:\n{table.to_string(index=False)}')
    return EXIT_SUCCESS


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_config(argv)
        return run(config)
    except PlateObstacleException as e:
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_STUDY_FAILURE
    except Exception:
        logger.exception('Study failed unexpectedly')
        return EXIT_UNEXPECTED_FAILURE


if __name__ == '__main__':
    sys.exit(main())
