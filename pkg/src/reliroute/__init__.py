"""Reliability-aware calibration, conformal intervals and four-action routing."""

from .errors import ConfigurationError, ContractViolation, InputError, ReliabilityError

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "InputError",
    "ReliabilityError",
    "__version__",
]
