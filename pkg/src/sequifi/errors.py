"""Exception types shared across the package."""


class SequifiError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(SequifiError):
    """A corpus manifest or features file failed validation."""


class FeatureError(SequifiError):
    """Audio or embedding ingestion failed."""


class ConfigError(SequifiError):
    """An experiment, strategy, or training configuration is invalid."""
