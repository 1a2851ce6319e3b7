from enum import Enum


class StudyMode(Enum):
    ADAPTIVE = 'adaptive'
    UNIFORM = 'uniform'
