"""
Exception hierarchy for the tomogravity toolkit

Every error carries the process exit code the CLI should return, and also
derives from the closest builtin so plain ``except ValueError`` still works.
"""

from typing import Optional


class TomogravityError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 6


class DimensionMismatchError(TomogravityError, ValueError):
    """Array shapes disagree (routing columns vs. traffic length, masks, ...)"""


class InvalidInputError(TomogravityError, ValueError):
    """A value violates a documented precondition"""


class TopologyParseError(TomogravityError, ValueError):
    """A line in a topology, traffic or load file could not be parsed"""
    exit_code = 3

    def __init__(self, message: str, path: Optional[str] = None, line_no: Optional[int] = None):
        self.path = path
        self.line_no = line_no
        location = ""
        if path is not None:
            location = f"{path}:{line_no}: " if line_no is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class NoObservationsError(TomogravityError, ValueError):
    """No observed link (or no observed link with positive load) remains"""
    exit_code = 5


class DegenerateProblemError(TomogravityError, ValueError):
    """Zero loads force every SD pair to zero"""
    exit_code = 5


class InfeasibleError(TomogravityError, RuntimeError):
    """The tomographic space is empty for the observed loads"""
    exit_code = 5


class InconsistentSystemError(TomogravityError, RuntimeError):
    """The linear system A* x = y* has no solution"""
    exit_code = 5

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (least-squares residual {residual:.6g})")


class MissingEdgeLoadError(TomogravityError, ValueError):
    """A node total needs an edge link whose load was not observed"""
    exit_code = 5


class InconsistentTotalsError(TomogravityError, ValueError):
    """Inbound and outbound node totals do not sum to the same N"""
    exit_code = 5


class DataFileError(TomogravityError, OSError):
    """An input file is missing or unreadable"""
    exit_code = 4
