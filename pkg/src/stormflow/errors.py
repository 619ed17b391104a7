class StormflowError(Exception):
    """Base class for all library errors."""


class DataError(StormflowError):
    """Input data is malformed, inconsistent, or unusable."""


class ConfigError(StormflowError):
    """Configuration or usage problem detected before processing."""


class LayoutMismatchError(DataError):
    """A trained model and a descriptor disagree on the feature layout."""
