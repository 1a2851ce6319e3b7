from pathlib import Path

import numpy as np
import pandas as pd

from src.plate_obstacle.adaptivity.estimator import EstimatorReport
from src.plate_obstacle.adaptivity.level_record import HISTORY_COLUMNS, LevelRecord
from src.plate_obstacle.discretization.mesh import Mesh
from src.plate_obstacle.discretization.space import DofMap
from src.plate_obstacle.solvers.vi_solver import DiscreteSolution

FLOAT_FORMAT = '%.17g'


def write_history(history: list[LevelRecord], path: Path):
    frame = pd.DataFrame([record.to_row() for record in history], columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='')


def read_history(path: Path) -> list[LevelRecord]:
    frame = pd.read_csv(path, float_precision='round_trip')
    return [LevelRecord.from_row(row) for row in frame.to_dict('records')]


def write_mesh(mesh: Mesh, path: Path):
    Path(path).write_text(mesh.to_text())


def read_mesh(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """
        Reads a mesh dump back into vertex coordinates and triangle vertex ids.
    """
    lines = Path(path).read_text().splitlines()
    header = lines[0].split()
    n_vertices, n_triangles = int(header[1]), int(header[3])
    vertices = np.array([[float(value) for value in line.split()] for line in lines[1:1 + n_vertices]])
    triangles = np.array([[int(value) for value in line.split()]
                          for line in lines[1 + n_vertices:1 + n_vertices + n_triangles]], dtype=np.int64)
    return vertices.reshape(n_vertices, 2), triangles.reshape(n_triangles, 3)


def write_estimator(report: EstimatorReport, path: Path):
    report.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_coincidence(dofmap: DofMap, solution: DiscreteSolution, path: Path):
    points = dofmap.coordinates[solution.constrained[solution.active]]
    Path(path).write_text(''.join(f'{x!r} {y!r}\n' for x, y in points.tolist()))


def write_summary(summary: dict[str, float], path: Path):
    frame = pd.DataFrame({'quantity': list(summary), 'value': list(summary.values())})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='')
