"""Exception types shared across the package."""


class SadaError(Exception):
    """Base class for all package errors."""


class ValidationError(SadaError):
    """Invalid argument, config value, or annotation content."""


class FormatError(SadaError):
    """Malformed binary feature file or annotation line."""


class CheckpointError(SadaError):
    """Checkpoint missing, corrupt, or incompatible with the config."""


class TrainingError(SadaError):
    """Training aborted, e.g. a non-finite loss."""
