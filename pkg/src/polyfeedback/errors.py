"""Exception types shared across the package."""


class PolyFeedbackError(Exception):
    """Base class for package errors."""


class BasisSizeError(PolyFeedbackError):
    """Requested index set is too large to enumerate."""


class ConnectivityError(PolyFeedbackError):
    """A multi-index set is not reachable from the zero index."""

    def __init__(self, index):
        self.index = tuple(index)
        super().__init__(
            f"multi-index {self.index} has no predecessor in the set; "
            "the index set is not connected to the root"
        )


class DimensionMismatchError(PolyFeedbackError):
    """Operands disagree on the state dimension."""


class StepSizeError(PolyFeedbackError):
    """An implicit time step produced a singular system."""


class GradientUnavailableError(PolyFeedbackError):
    """Objective gradient cannot be formed (infeasible or non-finite state)."""


class InfeasibleInitialGuessError(PolyFeedbackError):
    """The optimizer was started at a coefficient vector with infinite objective."""


class StepFailureError(PolyFeedbackError):
    """Backtracking line search exhausted its trial budget."""


class StabilizationError(PolyFeedbackError):
    """No stabilizing initialization could be constructed for the Riccati solver."""


class ConfigError(PolyFeedbackError):
    """Experiment configuration is malformed."""


class ArtifactError(PolyFeedbackError):
    """A stored run artifact is corrupt or incompatible."""
