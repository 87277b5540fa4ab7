"""Exception and warning types shared across the package."""


class RollClearError(Exception):
    """Base class for all package errors."""


class DataError(RollClearError, ValueError):
    """Case or scenario data violates an invariant.

    ``record`` optionally locates the offending entry, e.g. ``generators[2].bus``.
    """

    def __init__(self, message, record: str | None = None):
        super().__init__(message)
        self.record = record


class ParseError(DataError):
    """A file could not be parsed into the expected structure."""


class IslandingError(RollClearError):
    """A line-status state splits the network into islands."""


class GenerationError(RollClearError):
    """Scenario sampling failed to produce an admissible draw."""


class BuildError(RollClearError):
    """An LP could not be assembled from the supplied problem."""


class SolverError(RollClearError):
    """The LP backend failed or returned a non-optimal status."""

    def __init__(self, message, status=None, window=None):
        super().__init__(message)
        self.status = status
        self.window = window


class InfeasibleError(SolverError):
    pass


class UnboundedError(SolverError):
    pass


class MissingDualError(RollClearError, KeyError):
    """A price formula needs a dual the solution does not carry."""


class ConditionNotMet(RollClearError):
    """A theorem precondition does not hold, so the check was skipped."""


class DegeneracyWarning(UserWarning):
    """One-sided sensitivities disagree (the value function is kinked)."""


class AssumptionViolated(UserWarning):
    """A pricing formula was evaluated outside its stated premise."""


class SheddingPriceWarning(UserWarning):
    """A shedding price does not exceed every energy bid."""
