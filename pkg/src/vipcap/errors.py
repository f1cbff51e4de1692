"""Exception hierarchy shared by all vipcap modules.

The CLI maps these onto its exit-code contract: usage problems exit 1,
ConfigError/InputError/DataError exit 2, NumericError exits 3.
"""


class VipcapError(Exception):
    """Base class for all vipcap errors."""


class ConfigError(VipcapError):
    """Inconsistent configuration: bad dimensions, head counts, widths."""


class InputError(VipcapError):
    """A runtime argument violates an operation's precondition."""


class DataError(VipcapError):
    """Malformed or inconsistent external data (files, stores, batches)."""


class NumericError(VipcapError):
    """Non-finite values where finite ones are required."""
