"""Exception types shared across the library."""


class AnisoflowError(Exception):
    """Base class for all library errors."""


class ConfigurationError(AnisoflowError):
    """Invalid parameters, config keys, or a user-supplied split that fails validation."""


class DegenerateDirectionError(AnisoflowError):
    """A direction-dependent quantity was requested at p = 0."""


class DegenerateEdgeError(AnisoflowError):
    """A polygonal curve has a collapsed (zero length) edge."""


class NonconvergenceError(AnisoflowError):
    """The nonlinear solver failed to reach the residual tolerance.

    Carries the best iterate found (`best_nodes`), its report, and, when
    raised from a time loop, the failing step index.
    """

    def __init__(self, message, best_nodes=None, report=None, step_index=None):
        super().__init__(message)
        self.best_nodes = best_nodes
        self.report = report
        self.step_index = step_index


class StabilityViolationError(AnisoflowError):
    """An accepted unforced step violated the discrete energy estimate."""
