"""Exception hierarchy shared by all carnot_lab modules."""


class CarnotLabError(Exception):
    """Base class for every error raised by the library."""


class ExprSyntaxError(CarnotLabError, SyntaxError):
    """Malformed expression text.

    ``position`` is the 0-based character offset where parsing stopped and
    ``expected`` names the token that would have been accepted there.
    """

    def __init__(self, message, text="", position=0, expected=""):
        super().__init__(f"{message} at position {position} (expected {expected})")
        self.text = text
        self.position = position
        self.expected = expected


class UnknownVariable(CarnotLabError):
    pass


class DomainError(CarnotLabError, ArithmeticError):
    """An expression node was evaluated outside its domain."""

    def __init__(self, node, point, reason):
        super().__init__(f"{reason} in '{node}' at {tuple(point)}")
        self.node = node
        self.point = tuple(point)
        self.reason = reason


class NonsmoothInput(CarnotLabError):
    pass


class NonpositiveEpsilon(CarnotLabError, ValueError):
    pass


class InvalidWeights(CarnotLabError, ValueError):
    pass


class SingularFrame(CarnotLabError):
    pass


class InvalidFrame(CarnotLabError):
    """Commutator table violates the weight filtration."""


class TrajectoryEscape(CarnotLabError):
    pass


class StepFailure(CarnotLabError):
    pass


class NewtonDivergence(CarnotLabError):
    pass


class BadPartition(CarnotLabError, ValueError):
    pass


class DegenerateSample(CarnotLabError):
    pass


class UnboundedRatio(CarnotLabError):
    pass


class EvaluationFailure(CarnotLabError):
    pass


class MissingSample(CarnotLabError, KeyError):
    pass


class NonInvertibleL(CarnotLabError):
    pass


class SingularLambda(CarnotLabError):
    pass


class PreconditionFailed(CarnotLabError):
    """A limit required by an operation does not exist.

    ``verdict`` carries the report that established the failure.
    """

    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class LimitDivergence(CarnotLabError):
    pass


class UnknownEntry(CarnotLabError, KeyError):
    pass


class InputError(CarnotLabError, ValueError):
    """Malformed or inconsistent JSON input files."""
