"""Exception hierarchy shared by all bevplan modules."""


class BevplanError(Exception):
    """Base class for library errors."""


class DomainError(BevplanError, ValueError):
    """An input lies outside the domain of an operation."""


class ConfigurationError(BevplanError, ValueError):
    """A configuration object (camera, grid, sampler, ...) is invalid."""


class DegenerateDataError(DomainError):
    """Training data carries no signal (e.g. all features are zero)."""


class FormatError(BevplanError, ValueError):
    """A file does not follow the expected on-disk format."""
