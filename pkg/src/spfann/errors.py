"""Exception types shared across the package."""


class SpfannError(Exception):
    """Base class for all package errors."""


class PageBoundsError(SpfannError, IndexError):
    """A page or record read past the end of a file."""


class CorruptFileError(SpfannError, ValueError):
    """An index file failed a magic, version, or length check."""


class BuildError(SpfannError, ValueError):
    """Index construction received inconsistent or oversized inputs."""


class TrainingError(SpfannError, ValueError):
    """Quantizer training received too few or malformed samples."""


class GenerationError(SpfannError, RuntimeError):
    """Synthetic workload generation could not hit a requested target."""
