"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


class ConfigError(ValueError):
    """A parameter object or parameter combination is invalid."""
