"""Exception hierarchy shared by all gsq modules.

Every error carries a short machine-readable ``kind`` so the CLI can emit a
one-line ``error: <kind>: <message>`` reason.
"""


class GsqError(Exception):
    kind = "error"


class ParseError(GsqError):
    kind = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VertexRangeError(GsqError):
    kind = "vertex-range"


class DegreeBoundError(GsqError):
    kind = "degree-bound"


class DisconnectedError(GsqError):
    kind = "disconnected"


class CapExceededError(GsqError):
    kind = "cap-exceeded"


class ConvergenceError(GsqError):
    kind = "no-convergence"


class PreconditionError(GsqError):
    kind = "precondition"


class ViolationError(GsqError):
    """A measured quantity broke a bound that the construction guarantees."""

    kind = "violation"

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class InfeasibleError(GsqError):
    """Verified infeasibility (maps to CLI exit status 2)."""

    kind = "infeasible"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
