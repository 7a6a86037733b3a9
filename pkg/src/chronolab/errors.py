"""Exception hierarchy for chronolab."""


class ChronolabError(Exception):
    """Base class for all chronolab errors."""


class ConfigurationError(ChronolabError):
    """Invalid grid, potential, clock model or scenario configuration."""


class DomainError(ChronolabError):
    """A value or operand lies outside the mathematical domain of an operation."""


class DimensionError(ChronolabError):
    """Field shape does not match the grid it is applied on."""


class SolverError(ChronolabError):
    """Eigensolver failed to converge.  Carries the best residual reached."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class SelectionError(ChronolabError):
    """No eigenstate could be selected from the candidate list."""


class DegenerateFactorizationError(ChronolabError):
    """Too large a fraction of the clock grid fell below the node threshold."""


class MaskError(ChronolabError):
    """An operation dereferenced a masked (node) clock point."""


class QuantizationError(ChronolabError):
    """Cyclic clock momentum is not an integer multiple of hbar."""


class PropagationError(ChronolabError):
    """The implicit time stepper failed a linear solve."""


class RangeError(ChronolabError):
    """A trajectory point left the clock-grid interior."""


class UnusableClockError(ChronolabError):
    """Every tick of a schedule violated the minimum-speed cutoff."""


class InsufficientDataError(ChronolabError):
    """Not enough ticks/slices to carry out a comparison."""


class StageFailure(ChronolabError):
    """A pipeline stage raised; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
