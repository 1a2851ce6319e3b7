class PlateObstacleException(Exception):
    pass


class MeshRefinementError(PlateObstacleException):
    pass


class UnsupportedDegreeError(PlateObstacleException):
    pass


class QuadratureError(PlateObstacleException):
    pass


class PointLocationError(PlateObstacleException):
    pass


class NotPositiveDefiniteError(PlateObstacleException):
    pass


class SolverConvergenceError(PlateObstacleException):
    pass


class ProblemDefinitionError(PlateObstacleException):
    pass


class NonNestedMeshError(PlateObstacleException):
    pass


class InsufficientLevelsError(PlateObstacleException):
    pass


class MarkingError(PlateObstacleException):
    pass


class ConfigValidationError(PlateObstacleException):
    """
    Raised once for all problems found in a run configuration, so that a user can fix them in one go.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__('Invalid run configuration:\n' + '\n'.join(f'  - {problem}' for problem in self.problems))
