"""Exception hierarchy shared by all thermocal modules."""


class ThermocalError(Exception):
    """Base class for every error raised by this package."""


class MeshError(ThermocalError, ValueError):
    """Invalid mesh data or mesher input."""


class OutOfDomainError(MeshError):
    """A point lies outside the meshed domain beyond the snap tolerance."""


class MshFormatError(MeshError):
    """Malformed or unsupported MSH file content."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ProblemError(ThermocalError, ValueError):
    """Inconsistent problem definition (missing tags, bad material data)."""


class IllPosedProblemError(ProblemError):
    """The discrete system is singular (e.g. pure Neumann boundaries)."""


class SolverError(ThermocalError, RuntimeError):
    """Linear solver failure or non-convergence."""


class ForwardSolveError(SolverError):
    """A forward solve failed during calibration; carries the parameters."""

    def __init__(self, message, theta=None):
        self.theta = dict(theta) if theta is not None else None
        super().__init__(f"{message} (theta={self.theta})")


class SampleError(ThermocalError, ValueError):
    """Invalid sample set or sampling request."""


class CalibrationError(ThermocalError, ValueError):
    """Invalid calibration or optimizer input."""


class ConfigError(ThermocalError, ValueError):
    """Configuration file failed to parse or validate."""
