"""Exception taxonomy shared by all latentcast modules."""


class LatentcastError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LatentcastError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(LatentcastError):
    """A configuration value is invalid or inconsistent."""


class DataError(LatentcastError):
    """Input data is malformed or contains non-finite values."""


class DomainError(LatentcastError):
    """An argument lies outside the mathematical domain of the operation."""


class ContractError(LatentcastError):
    """A caller violated an API precondition."""


class NumericError(LatentcastError):
    """A computation produced non-finite values."""


class FitError(LatentcastError):
    """A regression fit could not be carried out."""
