"""Exception types shared across the package."""


class SpikePruneError(Exception):
    """Base class for all package errors."""


class DimensionError(SpikePruneError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(SpikePruneError):
    """An argument is outside its valid range."""


class NonFiniteError(SpikePruneError):
    """A forward or backward pass produced NaN or Inf values."""


class StaleTapeError(SpikePruneError):
    """backward() was called on a tape that is empty or already consumed."""


class MissingGradError(SpikePruneError):
    """An optimizer step was requested for a parameter without a gradient."""


class EmptyInputError(SpikePruneError):
    """A time-unrolled operation received zero time steps."""


class ConfigError(SpikePruneError):
    """A configuration document is malformed or contains unknown keys."""


class PlanError(SpikePruneError):
    """A prune plan does not match the model it is applied to."""


class OverPruneError(PlanError):
    """The requested sparsity leaves no usable dimensions."""


class CheckpointError(SpikePruneError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""


class FormatError(SpikePruneError):
    """An external data file (IDX) is malformed; message carries the byte offset."""


class TrainingDivergedError(SpikePruneError):
    """Training produced a non-finite loss; state was dumped where possible."""
