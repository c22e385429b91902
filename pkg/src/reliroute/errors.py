"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class ReliabilityError(Exception):
    exit_code = 1


class InputError(ReliabilityError, ValueError):
    """Malformed or out-of-contract input data."""

    exit_code = 1


class ConfigurationError(ReliabilityError, ValueError):
    exit_code = 1


class ContractViolation(ReliabilityError, RuntimeError):
    """A programming-contract breach (e.g. arithmetic on a MISSING node)."""

    exit_code = 2
