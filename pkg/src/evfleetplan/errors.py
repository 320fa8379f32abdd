"""Exception types shared across the package."""


class PlanError(Exception):
    """Base class for all package-specific errors."""


class GraphFormatError(PlanError):
    """Raised when a graph or trips file cannot be parsed.

    Carries the 1-based line number where parsing failed.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(PlanError):
    """Raised when loaded data violates a structural invariant."""


class ConnectivityError(ValidationError):
    """Raised when a graph is not strongly connected.

    ``node`` names one node that cannot reach (or be reached from) the rest.
    """

    def __init__(self, node: int, detail: str = ""):
        self.node = node
        msg = f"graph is not strongly connected: node {node} {detail}".rstrip()
        super().__init__(msg)


class MergeRejectedError(PlanError):
    """Raised when a node merge would break strong connectivity."""


class SolveError(PlanError):
    """Raised on malformed solver inputs (not on infeasibility, which is a status)."""
