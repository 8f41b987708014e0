"""Exception hierarchy shared by all modules."""


class TraceWalkError(Exception):
    """Base class for every error raised by this package."""


class DistributionError(TraceWalkError, ValueError):
    pass


class NegativeWeight(DistributionError):
    pass


class NotNormalized(DistributionError):
    pass


class ZeroWeightLayerOne(DistributionError):
    pass


class NonPositiveFirstDriftLayerZero(DistributionError):
    pass


class NonUnitIncrement(TraceWalkError, ValueError):
    pass


class NoGeneratorState(TraceWalkError):
    pass


class UnknownVertex(TraceWalkError, KeyError):
    pass


class TooSmall(TraceWalkError, ValueError):
    pass


class NotAnEdgePair(TraceWalkError, ValueError):
    pass


class NotTransient(TraceWalkError, ValueError):
    pass


class AlphaNotRoot(TraceWalkError, ValueError):
    pass


class AlphaInfinite(TraceWalkError, ValueError):
    pass


class FrontierNotExtended(TraceWalkError):
    pass


class VertexBudgetExceeded(TraceWalkError, MemoryError):
    """The lazily grown trace would exceed its configured vertex budget."""


class DegenerateGrid(TraceWalkError, ValueError):
    pass


class InsufficientGrid(TraceWalkError, ValueError):
    pass


class TooFewSamples(TraceWalkError, ValueError):
    pass


class ResistanceOverflow(TraceWalkError, ArithmeticError):
    """Partial resistance sums left the float range.

    ``log_sums`` carries the full series in log space; an overflow is itself
    evidence of divergence.
    """

    def __init__(self, message, log_sums=None):
        super().__init__(message)
        self.log_sums = log_sums


class InvariantViolation(TraceWalkError, AssertionError):
    pass
