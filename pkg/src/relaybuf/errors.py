"""Exception types shared across the package."""


class RelayBufError(Exception):
    """Base class for all errors raised by this package."""


class BufferTooSmall(RelayBufError):
    """Relay buffer does not exceed the larger of the two link rates."""


class ProbabilityOutOfRange(RelayBufError):
    """A link on-probability lies outside [0, 1]."""


class DegenerateP(RelayBufError):
    """An analytic path was asked to handle p exactly 0 or 1."""


class QueueOutOfRange(RelayBufError):
    """Queue state outside {0..N_r}."""


class MissingRandomness(RelayBufError):
    """A randomized policy needed a uniform draw and none was supplied."""


class InfeasibleAction(RelayBufError):
    """Action violates the scheduling or rate constraints for its queue state."""


class NoConvergence(RelayBufError):
    """Iterative solver hit its iteration cap before meeting tolerance."""


class SingularEvaluation(RelayBufError):
    """Policy-evaluation linear system is numerically singular."""


class NotThreshold(RelayBufError):
    """Extracted link-selection rule is not a monotone step function."""


class ThresholdNotRecurrent(RelayBufError):
    """Requested threshold is not a member of the recurrent class."""


class SingularSystem(RelayBufError):
    """Gaussian elimination met a pivot below tolerance."""


class DenominatorNearZero(RelayBufError):
    """Rank-one update denominator too small; caller should fall back."""
