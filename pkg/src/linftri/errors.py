"""Exception hierarchy shared by every module of the package."""


class LinfTriError(Exception):
    """Base class for all package errors."""


class CheiralityViolation(LinfTriError):
    """A point lies on or behind the image plane of a camera."""


class DegenerateGeometry(LinfTriError):
    """The observing rays do not determine a point (rank-deficient system)."""


class CheiralityCollapse(LinfTriError):
    """No point in front of every camera of a subset could be found."""


class BudgetExhausted(LinfTriError):
    """An iterative solver ran out of its iteration or evaluation budget."""


class DomainError(LinfTriError, ValueError):
    """An argument lies outside the domain of a formula."""


class GeometryRetryExhausted(LinfTriError):
    """Synthetic camera placement failed to satisfy cheirality."""


class MissingMetadata(LinfTriError):
    """Ground-truth labels were requested from an unlabeled instance."""


class Exhausted(LinfTriError):
    """Outlier removal ran out of data before the threshold was met."""


class ParseError(LinfTriError, ValueError):
    """Malformed instance file; the message names the offending location."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IoError(LinfTriError, OSError):
    """An instance or report file could not be read or written."""
