"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameters or experiment configuration."""


class SimulationError(RuntimeError):
    """A plant produced a non-finite state."""

    def __init__(self, message, state=None, action=None):
        super().__init__(message)
        self.state = state
        self.action = action


class DatasetFormatError(ValueError):
    """Malformed dataset, episode or weight file."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite; ``report`` holds the epochs completed so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OptimizerError(RuntimeError):
    """The genetic algorithm could not produce a finite candidate."""


class WarmupRequired(Exception):
    """Not enough recorded history to build a network input row."""
