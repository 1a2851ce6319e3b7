from dataclasses import asdict, dataclass, fields
from typing import Optional

import pandas as pd

HISTORY_COLUMNS = ['level', 'ndof', 'h_max', 'eta', 'err_h', 'q1', 'q2', 'lambda_mass', 'lambda_gap', 'pdas_iters',
                   'wall_ms']


@dataclass
class LevelRecord:
    """
        One row of a convergence history. `err_h` stays None until an error is available and `lambda_gap`, the
        change of multiplier mass from the previous level, is None on the first level.
    """
    level: int
    ndof: int
    h_max: float
    eta: float
    err_h: Optional[float]
    q1: float
    q2: float
    lambda_mass: float
    lambda_gap: Optional[float]
    pdas_iters: int
    wall_ms: float

    def to_row(self) -> dict:
        return asdict(self)

    @classmethod
    def from_row(cls, row: dict) -> 'LevelRecord':
        values = {}
        for field in fields(cls):
            value = row[field.name]
            if value is None or pd.isna(value):
                values[field.name] = None
            elif field.name in ('level', 'ndof', 'pdas_iters'):
                values[field.name] = int(value)
            else:
                values[field.name] = float(value)
        return cls(**values)
