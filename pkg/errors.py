"""Exception hierarchy shared by the planner modules."""


class PlannerError(Exception):
    """Base class for every error raised by the planner."""


class GeometryError(PlannerError):
    """Degenerate geometric input (collinear points, zero-area facets)."""


class CovarianceError(PlannerError):
    """Covariance matrix not positive semi-definite after the jitter schedule."""


class ProgramError(PlannerError):
    """Mission dimensions inconsistent with the transcription."""


class SolverError(PlannerError):
    """Solver could not start or produced non-finite values."""


class InfeasiblePlanError(PlannerError):
    """Decision vector violates the transcribed constraints."""

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = violations or {}


class MissionFileError(PlannerError):
    """Mission file could not be parsed or references a missing file."""


class PlanFileError(PlannerError):
    """Plan file is malformed or fails its integrity check."""


class ValidationError(PlannerError):
    """Monte-Carlo validation preconditions not met."""
