"""Exception hierarchy shared by all nito modules."""


class NitoError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(NitoError, ValueError):
    """An argument is outside its admissible range or has the wrong shape."""


class ConfigurationError(NitoError, ValueError):
    """Inconsistent architecture or run configuration."""


class StructuralError(NitoError):
    """The structural system is singular (e.g. supports leave rigid-body modes)."""


class SolverError(NitoError):
    """Iterative linear solve did not reach tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class OptimizerError(NitoError):
    """The optimality-criteria update could not satisfy the volume constraint."""


class TrainingError(NitoError):
    """Non-finite values encountered during training."""


class CheckpointError(NitoError):
    """A checkpoint cannot be used as requested."""


class ArchitectureMismatch(CheckpointError):
    def __init__(self, field, stored, requested):
        super().__init__(f"architecture mismatch on '{field}': checkpoint has {stored!r}, requested {requested!r}")
        self.field = field


class FormatError(NitoError):
    """Base class for on-disk format problems."""


class VersionError(FormatError):
    """Unrecognized magic string or format version."""


class ChecksumError(FormatError):
    """Payload checksum does not match."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload."""
