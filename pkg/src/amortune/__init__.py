"""Multi-task multi-fidelity Bayesian optimization against offline tuning databases."""

__version__ = "0.1.0"

from .errors import (
    AmortuneError,
    ConfigError,
    DataError,
    ExhaustedError,
    NumericalError,
    SchemaError,
)
from .kernels import AT2_SPEC, KernelSpec

__all__ = [
    "AT2_SPEC",
    "AmortuneError",
    "ConfigError",
    "DataError",
    "ExhaustedError",
    "KernelSpec",
    "NumericalError",
    "SchemaError",
    "__version__",
]
