"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside the domain of the operation."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance."""


class CapacityError(ValueError):
    """A round schedule or slot cannot carry the requested traffic."""


class ScheduleError(ValueError):
    """A packet was offered by a node that owns no slot."""


class HistoryError(LookupError):
    """The predictor lacks an input needed to roll the model forward."""


class ConfigError(ValueError):
    """A scenario configuration is malformed or out of scope."""


class PlaybackError(ValueError):
    """A recorded trace cannot be replayed against a configuration."""
