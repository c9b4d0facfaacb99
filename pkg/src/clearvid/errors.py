"""Exception taxonomy shared across the package.

Each failure mode callers are expected to branch on gets its own class;
everything inherits from ClearvidError so a CLI can catch broadly.
"""


class ClearvidError(Exception):
    pass


class ParameterError(ClearvidError, ValueError):
    """Invalid configuration value or out-of-range argument."""


class ShapeError(ClearvidError, ValueError):
    """Tensor rank/shape mismatch between related inputs."""


class DegenerateDataError(ClearvidError, ValueError):
    """Numerically degenerate input, e.g. a constant frame with zero variance."""


class InsufficientFramesError(ClearvidError, ValueError):
    """Too few frames for the requested operation."""


class TrainingFaultError(ClearvidError, RuntimeError):
    """Non-finite loss or gradient during source training."""


class AdaptationFaultError(ClearvidError, RuntimeError):
    """Non-finite loss or gradient during test-time adaptation."""


class CheckpointVersionError(ClearvidError, RuntimeError):
    """Checkpoint carries an unsupported format-version tag."""


class CheckpointCorruptError(ClearvidError, RuntimeError):
    """Checkpoint container is unreadable or internally inconsistent."""


class CheckpointKeyError(ClearvidError, RuntimeError):
    """Checkpoint is readable but misses a required entry."""


class MissingFrameError(ClearvidError, FileNotFoundError):
    """A frame file expected by the naming scheme is absent."""


class ResolutionMismatchError(ClearvidError, ValueError):
    """Frames of one video differ in resolution."""


class ManifestError(ClearvidError, ValueError):
    """Corpus manifest is missing, malformed, or inconsistent with the files."""


class ConfigError(ClearvidError, ValueError):
    """Run configuration file contains unknown or invalid keys."""
