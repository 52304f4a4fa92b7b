"""Exception types shared across the pipeline."""


class AnomSynthError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(AnomSynthError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class FormatError(AnomSynthError, ValueError):
    """A file did not follow the expected on-disk format."""


class ConfigError(AnomSynthError, ValueError):
    """A configuration document is invalid (unknown keys, bad values)."""
