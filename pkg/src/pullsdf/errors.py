"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value or incompatible shapes/dimensions."""


class InsufficientPointsError(ValueError):
    """A query needs more points than the cloud provides."""


class DegenerateGradientError(RuntimeError):
    """Gradient norm fell at or below the floor where a direction was needed."""


class TrainingDivergenceError(RuntimeError):
    """Training produced NaN/Inf or ran out of usable samples; carries the step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CloudFormatError(ValueError):
    """Malformed point-cloud file; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class MeshFormatError(ValueError):
    """Malformed mesh file."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class CheckpointError(ValueError):
    """Malformed checkpoint bytes; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class CheckpointVersionError(CheckpointError):
    """Checkpoint has an unsupported version field."""


class EmptyMeshWarning(UserWarning):
    """Surface extraction found no zero crossing."""
