"""Exception hierarchy shared by all fuscale modules."""


class FusError(Exception):
    """Base class for every error raised by fuscale."""


class SchemaError(FusError, ValueError):
    """Input file does not follow the documented layout."""


class DataQualityError(FusError):
    """Filtering left nothing (or too little) to analyse."""


class NotPositiveDefiniteError(FusError, ValueError):
    """A matrix that must be positive definite is not."""


class AnalysisError(FusError):
    """A statistical stage could not produce a result."""


class ConfigError(FusError, ValueError):
    """Conflicting or incomplete configuration."""
