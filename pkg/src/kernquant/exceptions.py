"""Exception hierarchy shared by every kernquant module."""


class KernQuantError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(KernQuantError, ValueError):
    """Array extents disagree with a declared layer shape."""


class NonDivisibleChannels(ShapeMismatch):
    """The channel count is not a multiple of the subspace count/dimension."""


class InvalidK(KernQuantError, ValueError):
    """Requested number of representatives is outside ``[1, p*p*M]``."""


class InfeasibleSparsity(KernQuantError, ValueError):
    """No dictionary size satisfies the equal-budget inequality."""


class NonOverlappingCurves(KernQuantError, ValueError):
    """Two error curves share no common error range."""


class CorruptFile(KernQuantError, ValueError):
    """A container failed magic, size or CRC validation."""


class RankDeficientSupport(UserWarning):
    """Selected dictionary atoms were linearly dependent.

    Never raised; the least-norm solution is used and the condition is
    recorded in the solver trace.
    """
