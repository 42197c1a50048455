"""Exception taxonomy shared across the package."""


class AmortuneError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(AmortuneError):
    """A hyperparameter-space document is malformed or self-inconsistent."""


class ConfigError(AmortuneError):
    """A raw configuration is invalid against its space."""


class DataError(AmortuneError):
    """A database bundle or observation log violates its contract."""


class NumericalError(AmortuneError):
    """A numerical routine failed (factorization, non-finite objective)."""


class ExhaustedError(AmortuneError):
    """Every configuration has been queried to the maximum fidelity."""
