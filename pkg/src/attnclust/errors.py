"""Exception types raised across the package."""


class AttnClustError(ValueError):
    """Base class for argument errors."""


class DimensionError(AttnClustError):
    pass


class DomainError(AttnClustError):
    pass


class ConfigurationError(AttnClustError):
    pass


class EmptySequenceError(AttnClustError):
    pass


class StepError(AttnClustError):
    pass
