class ConfigurationError(ValueError):
    """Invalid scenario, decision or experiment configuration."""


class CheckpointMismatch(RuntimeError):
    """A persisted checkpoint does not belong to the current run."""
