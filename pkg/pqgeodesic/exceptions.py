"""Exception hierarchy. Each family maps to one CLI exit code."""


class GeodesicError(Exception):
    """Base class for all errors raised by pqgeodesic"""
    exit_code = 1


class InputError(GeodesicError):
    exit_code = 1


class ParseError(InputError):
    pass


class EmptyMeshError(InputError):
    pass


class DegenerateFaceError(InputError):
    def __init__(self, face: int, area: float, threshold: float):
        self.face = face
        self.area = area
        self.threshold = threshold
        super().__init__(f"Face {face} is degenerate (area {area:.3e} < {threshold:.3e})")


class CenterCoincidenceError(InputError):
    pass


class DimensionError(InputError):
    pass


class MeshLineageError(InputError):
    pass


class ConfigError(InputError):
    pass


class SolveFailure(GeodesicError):
    exit_code = 2


class SolverStatusError(SolveFailure):
    def __init__(self, status: str, diagnostics: dict | None = None):
        self.status = status
        self.diagnostics = diagnostics or {}
        super().__init__(f"Solver finished with status {status}: {self.diagnostics}")


class NegativeFieldError(SolveFailure):
    pass


class SolverUnavailableError(SolveFailure):
    pass


class SourceError(GeodesicError):
    exit_code = 3


class BadBarycentricError(SourceError):
    pass


class FaceIndexError(SourceError):
    pass


class IsolatedVertexError(SourceError):
    pass


class EmptyCurveError(SourceError):
    pass


class NoSourceError(SourceError):
    pass


class NonVertexSourceError(SourceError):
    pass


class SourceSpecError(SourceError):
    pass
