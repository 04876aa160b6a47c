"""Exception types raised across the package."""


class TreeboundError(Exception):
    """Base class for all package errors."""


class InvalidGraphError(TreeboundError, ValueError):
    pass


class NoSpanningTreeError(TreeboundError, ValueError):
    """Raised when an operation needs a spanning tree and the graph is disconnected."""


class InvalidConfigurationError(TreeboundError, ValueError):
    pass


class ProblemTooLargeError(TreeboundError, ValueError):
    """Raised when exact enumeration or elimination would exceed the table-size cap."""

    def __init__(self, message, cap):
        super().__init__(f"{message} (cap = {cap})")
        self.cap = cap


class InvalidTableError(TreeboundError, ValueError):
    pass


class InvalidPseudomarginalError(TreeboundError, ValueError):
    pass


class ShapeMismatchError(TreeboundError, ValueError):
    pass


class InadmissibleCombinationError(TreeboundError, ValueError):
    """Raised when a tree mixture does not average back to the target parameters."""

    def __init__(self, max_gap, message=None):
        super().__init__(message or f"convex combination misses target parameters by {max_gap:.3e}")
        self.max_gap = max_gap


class BoundaryError(TreeboundError, ValueError):
    """Raised when a quantity needs strictly positive tables and gets a zero entry."""


class StrictPositivityError(TreeboundError, ValueError):
    pass


class ModelFormatError(TreeboundError, ValueError):
    pass


class SolverError(TreeboundError, RuntimeError):
    pass
