from enum import IntEnum


class DofKind(IntEnum):
    VERTEX = 0
    EDGE = 1
    CELL = 2
