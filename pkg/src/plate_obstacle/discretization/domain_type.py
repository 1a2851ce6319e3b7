from enum import Enum


class DomainType(Enum):
    SQUARE = 'square'
    LSHAPE = 'lshape'


class BoundaryMode(Enum):
    HOMOGENEOUS = 'homogeneous'
    INTERPOLATED = 'interpolated'
