"""Exception types shared across the pipeline.

Everything derives from VoxProfileError so CLI entry points can catch one
base class and map it to a nonzero exit code.
"""


class VoxProfileError(Exception):
    pass


class ShapeError(VoxProfileError, ValueError):
    """A tensor/vector has the wrong dimensionality for the operation."""


class DataError(VoxProfileError, ValueError):
    """Malformed records: duplicate ids, missing fields, bad labels."""


class DegenerateInputError(VoxProfileError, ValueError):
    """Input is valid in shape but unusable (silent audio, too short, ...)."""


class ParameterError(VoxProfileError, ValueError):
    """An operation parameter is outside its valid range."""


class AudioFormatError(VoxProfileError, ValueError):
    """The audio file exists but cannot be decoded."""


class UnsupportedVariantError(VoxProfileError, ValueError):
    """Operation requested on a model variant that does not support it."""


class CheckpointFormatError(VoxProfileError, ValueError):
    """Checkpoint is corrupt or carries an incompatible format version."""


class TrainingDivergedError(VoxProfileError, RuntimeError):
    """Loss became non-finite; carries the offending step diagnostics."""
