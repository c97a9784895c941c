"""Exception hierarchy shared by all modules."""


class ChainError(ValueError):
    """Base class for every error raised by this package."""


class NegativeOffDiagonal(ChainError):
    pass


class RowSumNonzero(ChainError):
    pass


class Reducible(ChainError):
    pass


class SolveFailed(ChainError):
    pass


class NegativeTime(ChainError):
    pass


class NotDetailedBalance(ChainError):
    """Raised by operations that are only defined for reversible chains."""


class BoundaryLikelihood(ChainError):
    """A likelihood vector with a zero entry was passed where an interior point is required."""


class BoundaryUnsupported(ChainError):
    pass


class NonpositiveArgument(ChainError):
    pass


class NonzeroMean(ChainError):
    pass


class EigenFailed(ChainError):
    pass


class OptFailed(ChainError):
    pass


class Infeasible(ChainError):
    pass


class HorizonMismatch(ChainError):
    pass


class BadTangent(ChainError):
    pass
