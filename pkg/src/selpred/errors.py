"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit code:
"internal" -> 1, "data" -> 2, "config" -> 3.
"""


class SelpredError(Exception):
    """Base class for all package errors."""

    category = "internal"


class DataError(SelpredError):
    """The user-supplied data cannot be processed as requested."""

    category = "data"


class ConfigError(SelpredError):
    """Invalid configuration or argument combination."""

    category = "config"


# ---------------------------------------------------------------------------
# data problems

class NonFinite(DataError):
    """Input contains NaN or Inf."""


class ConstantColumn(DataError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"column {index} is constant and cannot be scaled")


class DimensionMismatch(DataError):
    pass


class RankDeficient(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SingularGram(DataError):
    """X_E' X_E is numerically singular."""


class EmptyActiveSet(DataError):
    """A selection step produced no active variables where some are required."""


class TieDetected(DataError):
    """Screening scores tie at the cutoff rank; the selection event is ill-defined."""


class NoLambdaInRange(DataError):
    """No grid value of the penalty produced an active set of the requested size."""


class SplitTooSmall(DataError):
    pass


class FoldTooSmall(DataError):
    pass


# ---------------------------------------------------------------------------
# numerical / algorithmic failures

class NoConvergence(SelpredError):
    def __init__(self, max_iters):
        self.max_iters = max_iters
        super().__init__(f"no convergence after {max_iters} iterations")


class AcceptanceTooLow(SelpredError):
    """Accept-reject sampling could not collect the requested draws."""


class InfeasibleStart(SelpredError):
    """Chain start point violates the constraints."""


class DegenerateChord(SelpredError):
    """Hit-and-run chords collapsed repeatedly; constraints are numerically active."""


class EmptyArc(SelpredError):
    """Great-circle arc intersection came out empty from a feasible point."""


class EmptyTruncation(SelpredError):
    """Truncation interval is empty (lower bound exceeds upper bound)."""


class NonMember(SelpredError):
    """Observed point violates the event it is supposed to satisfy."""


class ZeroMass(SelpredError):
    """Reference distribution assigns (numerically) zero mass to the truncation set."""


class EmptySet(SelpredError):
    """Truncation-set intersection is empty or excludes the observed statistic."""


class NonIntegerTrace(SelpredError):
    """A projector trace that must be an integer degree of freedom is not."""


class SingularReconstruction(SelpredError):
    """I - theta0 * L is too ill-conditioned to invert."""


class FitterFailure(SelpredError):
    def __init__(self, draw_index, cause):
        self.draw_index = draw_index
        super().__init__(f"fitter failed on draw {draw_index}: {cause}")
