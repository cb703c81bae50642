"""Exception types shared across the package."""


class VaribodyError(Exception):
    """Base class for package errors."""


class ParameterError(VaribodyError):
    """Invalid argument or configuration value (bad shape, range, unknown token)."""


class TrainingError(VaribodyError):
    """Optimization failed: non-finite loss/gradient or an unmet training contract."""


class CheckpointError(VaribodyError):
    """Checkpoint file is missing, corrupt, or from an incompatible version."""
