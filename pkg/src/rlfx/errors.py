"""Exception hierarchy shared by every rlfx module."""


class RlfxError(Exception):
    """Base class for all errors raised by rlfx."""


class ArgumentError(RlfxError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(RlfxError, ValueError):
    """Tensor dimensions disagree."""


class LoadError(RlfxError):
    """An input file is missing, empty, or does not match its schema."""


class SynthError(RlfxError):
    """The synthetic generator could not satisfy its configuration."""


class TrainingError(RlfxError):
    """Training could not start or diverged."""


class PruningError(RlfxError):
    """Channel importance carries no signal to rank."""


class ConfigError(RlfxError):
    """Pipeline configuration is invalid."""


class DependencyError(RlfxError):
    """A pipeline stage is missing an upstream artifact."""
