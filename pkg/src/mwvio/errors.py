"""Exception types raised across the package."""


class MwvioError(Exception):
    pass


class SingularInput(MwvioError):
    pass


class DegeneratePlanes(MwvioError):
    pass


class LineThroughOrigin(MwvioError):
    pass


class TooSmall(MwvioError):
    pass


class DegenerateSegment(MwvioError):
    pass


class ParallelLines(MwvioError):
    pass


class InsufficientConstraints(MwvioError):
    pass


class WindowTooSmall(MwvioError):
    pass


class ProjectionDegenerate(MwvioError):
    pass


class BehindCamera(MwvioError):
    pass


class InsufficientBaseline(MwvioError):
    pass


class SolverDiverged(MwvioError):
    pass


class ConfigInvalid(MwvioError):
    pass


class NoOverlap(MwvioError):
    pass


class ParseError(MwvioError):
    """Malformed input file. Carries 1-based line and column."""

    def __init__(self, message, line=0, column=0, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = f"{path}:" if path else ""
        super().__init__(f"{where}{line}:{column}: {message}")
